import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import table_oracles
from grouploss.core import ContractViolation, LinearOptimizer, LossAssessor, Mixture, mixture_loss
from grouploss.groupopt import (
    Grid,
    NoGridPointAccepted,
    ProjectionAborted,
    build_sorted_grid,
    compute_schedule,
    detect_monotone,
    group_opt,
    project_toward,
    solve_group_opt,
)
from grouploss.objectives import linear, max_loss
from grouploss.oracle import brute_force_min, exact_projection

SEGMENT = np.array([[0.0, 1.0], [1.0, 0.0]])


def _sched(q, K):
    # schedule with a chosen spacing, for grid tests
    from grouploss.groupopt import Schedule

    return Schedule(1.0, K, q * math.sqrt(K), q, q * q * math.sqrt(K), 1)


@pytest.mark.parametrize("eps,K,beta,q,tau,T", [
    (1.0, 1, 0.2, 0.2, 0.04, 81),
    (0.5, 4, 0.1, 0.05, 0.005, 2397),
    (0.25, 2, 0.05, 0.0353553391, 0.00176776695, 5348),
])
def test_schedule_examples(eps, K, beta, q, tau, T):
    s = compute_schedule(eps, K)
    assert s.beta == pytest.approx(beta, rel=1e-12)
    assert s.q == pytest.approx(q, rel=1e-8)
    assert s.tau == pytest.approx(tau, rel=1e-8)
    assert s.T == T


@given(st.floats(0.01, 1.0), st.integers(1, 6))
def test_schedule_identities(eps, K):
    s = compute_schedule(eps, K)
    assert s.tau * math.sqrt(K) == pytest.approx(s.beta ** 2, rel=1e-12)
    assert s.q * math.sqrt(K) == pytest.approx(s.beta, rel=1e-12)
    assert s.tau == pytest.approx(s.beta * s.q, rel=1e-12)
    assert s.tau == pytest.approx(eps ** 2 / (25 * math.sqrt(K)), rel=1e-12)
    assert s.T >= 1


@pytest.mark.parametrize("eps,K", [(0.0, 1), (1.5, 1), (0.5, 0), (0.5, 1.5)])
def test_schedule_rejects(eps, K):
    with pytest.raises(ValueError):
        compute_schedule(eps, K)


def test_grid_identity_order():
    g = build_sorted_grid(lambda l: l[..., 0], _sched(0.5, 1))
    np.testing.assert_allclose(g.points[:, 0], [0, 0.5, 1.0])


def test_grid_drops_one_when_q_does_not_divide():
    g = build_sorted_grid(lambda l: l[..., 0], _sched(0.3, 1))
    np.testing.assert_allclose(np.sort(g.points[:, 0]), [0, 0.3, 0.6, 0.9])


def test_grid_sum_order_and_ties():
    g = build_sorted_grid(lambda l: l.sum(axis=-1), _sched(0.5, 2))
    pts = g.points
    assert len(pts) == 9
    np.testing.assert_allclose(pts[0], [0, 0])
    np.testing.assert_allclose(pts[-1], [1, 1])
    # ties at value 0.5 broken lexicographically: (0, .5) before (.5, 0)
    np.testing.assert_allclose(pts[1:3], [[0, 0.5], [0.5, 0]])


def test_grid_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        with np.errstate(divide="ignore"):
            build_sorted_grid(lambda l: 1.0 / l[..., 0], _sched(0.5, 1))


def _full(q, K):
    s = _sched(q, K)
    return Grid(s.q, s.levels, K, np.zeros(0, np.int64), np.zeros(0))


def test_monotone_detection():
    assert detect_monotone(lambda l: l.sum(axis=-1), _full(0.25, 2)) == 1
    assert detect_monotone(lambda l: -l[..., 0], _full(0.25, 2)) == 0
    assert detect_monotone(lambda l: (l[..., 0] - 0.5) ** 2, _full(0.5, 1)) == 0


def test_projection_single_choice_no_clamp():
    s = compute_schedule(0.5, 1)
    M, A = table_oracles([[0.3]])
    res = project_toward([0.0], 0, s, M, A)
    np.testing.assert_allclose(res.l_hat, [0.3])
    assert res.distance == pytest.approx(0.3)
    assert len(res.atoms) == s.T


def test_projection_single_choice_clamped():
    s = compute_schedule(0.5, 1)
    M, A = table_oracles([[0.3]])
    res = project_toward([0.4], 1, s, M, A)
    np.testing.assert_allclose(res.distances, 0.0)
    assert res.accepted


def test_projection_segment_center():
    s = compute_schedule(0.2, 2)
    M, A = table_oracles(SEGMENT)
    res = project_toward([0.5, 0.5], 0, s, M, A)
    bound = math.sqrt(4 * s.tau * math.sqrt(2) + 2 * (1 + math.log(s.T)) / s.T)
    assert res.distance <= min(bound, s.accept_radius)
    assert res.accepted


def test_projection_zero_weight_first_call():
    seen = []
    M = LinearOptimizer(lambda w: seen.append(w.copy()) or 0)
    project_toward([0.5], 0, compute_schedule(1.0, 1), M, LossAssessor(lambda c: np.array([0.2])))
    np.testing.assert_array_equal(seen[0], [0.0])


def test_projection_nonnegative_needs_clamp():
    M, A = table_oracles(SEGMENT, mode="nonnegative")
    with pytest.raises(ContractViolation):
        project_toward([0.5, 0.5], 0, compute_schedule(0.5, 2), M, A)


def test_projection_aborts_with_partial_trace():
    calls = {"n": 0}

    def flaky(w):
        calls["n"] += 1
        if calls["n"] == 5:
            raise RuntimeError("backend down")
        return 0

    with pytest.raises(ProjectionAborted) as exc:
        project_toward([0.5], 0, compute_schedule(1.0, 1), LinearOptimizer(flaky),
                       LossAssessor(lambda c: np.array([0.2])))
    assert exc.value.step == 4
    assert len(exc.value.atoms) == 4
    assert len(exc.value.distances) == 3


def test_nonnegative_mode_with_decreasing_objective_is_rejected():
    M, A = table_oracles(SEGMENT, mode="nonnegative")
    with pytest.raises(ContractViolation):
        group_opt(0.5, lambda l: -l[..., 0], A, M, 2)


def test_vertex_optimum():
    M, A = table_oracles(SEGMENT)
    m = group_opt(0.2, linear([1.0, 0.0]), A, M, 2, reachable=SEGMENT)
    l = mixture_loss(m, A)
    assert l[0] <= 0.2


def test_max_of_segment():
    M, A = table_oracles(SEGMENT)
    f = max_loss(2)
    run = solve_group_opt(0.2, f, A, M, 2)
    val = float(f(mixture_loss(run.mixture, A)))
    ref, _ = brute_force_min(f, SEGMENT, 0.01)
    assert ref == pytest.approx(0.5)
    assert val <= ref + 0.2
    assert len(run.mixture) <= 3
    s = run.schedule
    assert run.optimizer_calls <= s.grid_size * (s.T + 1)
    assert run.assessor_calls <= s.grid_size * s.T


def test_screening_matches_unscreened_run(rng):
    P = rng.uniform(size=(4, 2))
    M, A = table_oracles(P)
    f = max_loss(2)
    a = solve_group_opt(0.5, f, A, M, 2)
    b = solve_group_opt(0.5, f, A, M, 2, reachable=P)
    np.testing.assert_array_equal(a.point, b.point)
    assert a.mixture == b.mixture
    assert b.visited <= a.visited


def test_out_of_range_assessor_raises_no_grid_point():
    # losses outside the box are never within 3 beta of a grid point
    M = LinearOptimizer(lambda w: 0)
    with pytest.raises(NoGridPointAccepted) as exc:
        group_opt(1.0, lambda l: l.sum(axis=-1), LossAssessor(lambda c: np.array([2.0, 2.0])), M, 2)
    assert exc.value.visited == compute_schedule(1.0, 2).grid_size
    assert exc.value.best_distance > 0.6


def test_assessor_within_tolerance_keeps_contraction():
    # an adversarial assessor off by exactly tau keeps ||l_t - l_hat_t|| <= tau
    s = compute_schedule(0.5, 2)
    P = np.array([[0.1, 0.9], [0.8, 0.3], [0.5, 0.5]])
    shift = s.tau * np.array([1.0, -1.0]) / math.sqrt(2)
    M = LinearOptimizer(lambda w: int(np.argmin(P @ w)), s.tau)
    noisy = LossAssessor(lambda c: P[c] + (shift if c % 2 == 0 else -shift), s.tau)
    r = np.array([0.4, 0.4])
    res = project_toward(r, 0, s, M, noisy)
    exact = mixture_loss(Mixture.uniform(res.atoms), lambda c: P[c])
    assert np.linalg.norm(exact - res.l_hat) <= s.tau + 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_projection_distance_bound_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 4))
    P = rng.uniform(size=(int(rng.integers(1, 6)), K))
    s = compute_schedule(0.5, K)
    r = rng.integers(0, s.levels, K) * s.q
    M, A = table_oracles(P)
    res = project_toward(r, 0, s, M, A)
    d2, _, gap = exact_projection(r, P)
    t = np.arange(1, s.T + 1)
    bound = d2 + 4 * s.tau * math.sqrt(K) + K * (1 + np.log(t)) / t
    assert np.all(res.distances ** 2 <= bound + 1e-9)
