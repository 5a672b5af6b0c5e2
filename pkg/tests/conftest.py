import numpy as np
import pytest

from grouploss.core import LinearOptimizer, LossAssessor
from grouploss.problems import FiniteChoiceProblem


def random_problem(rng, rows, K):
    return FiniteChoiceProblem(rng.uniform(0, 1, size=(rows, K)))


def table_oracles(P, mode="general"):
    P = np.asarray(P, dtype=float)
    M = LinearOptimizer(lambda w: int(np.argmin(P @ w)), 0.0, mode)
    return M, LossAssessor(lambda c: P[c])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
