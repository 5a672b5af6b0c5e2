"""Concrete back-ends with exact oracles: facility location, explicit loss
tables and finite classification testbeds."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import floyd_warshall

from .core import LinearOptimizer, LossAssessor, as_loss_vector
from .objectives import (
    GroupStats,
    ObjectiveSpec,
    disparity_spec,
    false_positive_mass,
    fold_constraint,
)

MAX_NODES = 12
MAX_FACILITIES = 4
MAX_HYPOTHESES = 10_000
SCHEMA_VERSION = 1


def _argmin_first(values: np.ndarray) -> int:
    # np.argmin already returns the first minimizer
    return int(np.argmin(values))


@dataclass(frozen=True)
class FiniteChoiceProblem:
    """A finite choice set given by its loss table (rows = choices, columns = groups).

    ``comparison_rows`` marks the rows the guarantee competes against; the
    optimizer still searches every row.
    """

    loss_matrix: np.ndarray
    comparison_rows: Optional[tuple] = None

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.loss_matrix, dtype=float))
        if m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError("FiniteChoiceProblem: need at least one row and one group")
        for row in m:
            as_loss_vector(row)
        m.setflags(write=False)
        object.__setattr__(self, "loss_matrix", m)
        if self.comparison_rows is not None:
            rows = tuple(int(i) for i in self.comparison_rows)
            if not rows or min(rows) < 0 or max(rows) >= len(m):
                raise ValueError("FiniteChoiceProblem: comparison_rows must be nonempty valid rows")
            object.__setattr__(self, "comparison_rows", rows)

    @property
    def K(self) -> int:
        return self.loss_matrix.shape[1]

    @property
    def n_rows(self) -> int:
        return self.loss_matrix.shape[0]

    def loss(self, row: int) -> np.ndarray:
        return self.loss_matrix[row]

    def loss_points(self) -> np.ndarray:
        return self.loss_matrix

    def comparison_points(self) -> np.ndarray:
        if self.comparison_rows is None:
            return self.loss_matrix
        return self.loss_matrix[list(self.comparison_rows)]

    def linear_optimizer(self, mode: str = "general") -> LinearOptimizer:
        P = self.loss_matrix
        return LinearOptimizer(lambda w: _argmin_first(P @ w), 0.0, mode)

    def assessor(self) -> LossAssessor:
        P = self.loss_matrix
        return LossAssessor(lambda c: P[c], 0.0)


def finite_linear_optimizer(w, prob: FiniteChoiceProblem) -> int:
    """Row minimizing ``w . l``, ties to the lowest index."""
    return _argmin_first(prob.loss_matrix @ np.asarray(w, dtype=float))


@dataclass(frozen=True)
class FlopInstance:
    """Facility location with group-averaged customer distances.

    Nodes are 0-based. ``distance[u, v]`` is the shortest-path distance from
    customer ``u`` to a facility at ``v``.
    """

    distance: np.ndarray
    customer_weight: np.ndarray
    groups: tuple
    m: int

    def __post_init__(self):
        d = np.asarray(self.distance, dtype=float)
        n = d.shape[0]
        if d.shape != (n, n) or n < 1:
            raise ValueError("FlopInstance: distance must be a square matrix")
        if not np.all(np.isfinite(d)) or np.any(d < 0) or np.any(np.diag(d) != 0):
            raise ValueError("FlopInstance: distances must be finite, nonnegative, zero diagonal")
        w = np.asarray(self.customer_weight, dtype=float)
        if w.shape != (n,) or np.any(w < 0):
            raise ValueError("FlopInstance: need one nonnegative weight per node")
        groups = tuple(tuple(sorted(int(v) for v in g)) for g in self.groups)
        if not groups:
            raise ValueError("FlopInstance: need at least one group")
        for k, g in enumerate(groups):
            if not g or min(g) < 0 or max(g) >= n:
                raise ValueError(f"FlopInstance: group {k} is empty or names an unknown node")
            if w[list(g)].sum() <= 0:
                raise ValueError(f"FlopInstance: group {k} has zero total weight")
        if not 1 <= int(self.m) <= n:
            raise ValueError(f"FlopInstance: need 1 <= m <= n, got m={self.m}, n={n}")
        d.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "distance", d)
        object.__setattr__(self, "customer_weight", w)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def from_arcs(cls, n: int, arcs: Sequence, customer_weight, groups, m: int,
                  symmetric: bool = False) -> "FlopInstance":
        """Build from weighted directed arcs ``(u, v, length)`` via Floyd-Warshall."""
        rows, cols, vals = [], [], []
        for u, v, length in arcs:
            rows.append(int(u))
            cols.append(int(v))
            vals.append(float(length))
            if symmetric:
                rows.append(int(v))
                cols.append(int(u))
                vals.append(float(length))
        graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
        d = floyd_warshall(graph, directed=True)
        if not np.all(np.isfinite(d)):
            raise ValueError("FlopInstance.from_arcs: graph is not strongly connected")
        return cls(d, customer_weight, groups, m)

    @property
    def n(self) -> int:
        return self.distance.shape[0]

    @property
    def K(self) -> int:
        return len(self.groups)

    @cached_property
    def scale(self) -> float:
        top = float(self.distance.max())
        return top if top > 0 else 1.0

    @cached_property
    def _group_weights(self) -> np.ndarray:
        gw = np.zeros((self.K, self.n))
        for k, g in enumerate(self.groups):
            gw[k, list(g)] = self.customer_weight[list(g)]
        return gw / gw.sum(axis=1, keepdims=True)

    @cached_property
    def subsets(self) -> list:
        if self.n > MAX_NODES or self.m > MAX_FACILITIES:
            raise ValueError(
                f"problems.flop_linear_optimizer: n={self.n}, m={self.m} exceeds the exact "
                f"enumeration budget (n <= {MAX_NODES}, m <= {MAX_FACILITIES})")
        return list(itertools.combinations(range(self.n), self.m))

    @cached_property
    def loss_table(self) -> np.ndarray:
        """Losses of every ``m``-subset in lexicographic order."""
        idx = np.array(self.subsets)
        nearest = self.distance[:, idx].min(axis=2)  # (n, subsets)
        table = (self._group_weights @ nearest).T / self.scale
        table.setflags(write=False)
        return table

    def loss_points(self) -> np.ndarray:
        return self.loss_table

    def linear_optimizer(self, mode: str = "general") -> LinearOptimizer:
        return LinearOptimizer(lambda w: flop_linear_optimizer(w, self), 0.0, mode)

    def assessor(self) -> LossAssessor:
        return LossAssessor(lambda c: flop_loss(c, self), 0.0)


def flop_loss(locations, inst: FlopInstance) -> np.ndarray:
    """Per-group weighted mean distance to the nearest open facility, divided by the max distance."""
    loc = sorted(int(v) for v in locations)
    if len(loc) != inst.m or len(set(loc)) != inst.m or loc[0] < 0 or loc[-1] >= inst.n:
        raise ValueError(f"problems.flop_loss: need {inst.m} distinct valid nodes, got {locations}")
    nearest = inst.distance[:, loc].min(axis=1)
    return inst._group_weights @ nearest / inst.scale


def flop_linear_optimizer(w, inst: FlopInstance) -> tuple:
    """Exact minimizer of ``w . flop_loss`` over all ``m``-subsets, lexicographic ties."""
    vals = inst.loss_table @ np.asarray(w, dtype=float)
    return inst.subsets[_argmin_first(vals)]


@dataclass(frozen=True)
class FiniteClassificationTestbed:
    """A finite distribution over ``(x, y)`` with an explicit hypothesis family.

    Attributes
    ----------
    xs, ys, probs : arrays of length D
        Domain entries; ``xs`` are integer feature ids.
    hypotheses : (H, D) array
        0/1 prediction of each hypothesis on each entry.
    group_of_x : (K, n_x) bool array
        Group membership of each feature id.
    legal : (H,) bool array
        Hypotheses available to the optimizer. Defaults to those whose
        prediction depends on ``x`` only.
    """

    xs: np.ndarray
    ys: np.ndarray
    probs: np.ndarray
    hypotheses: np.ndarray
    group_of_x: np.ndarray
    legal: Optional[np.ndarray] = None
    names: Optional[tuple] = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.int64)
        ys = np.asarray(self.ys, dtype=np.int64)
        pr = np.asarray(self.probs, dtype=float)
        hyp = np.atleast_2d(np.asarray(self.hypotheses, dtype=np.int64))
        grp = np.atleast_2d(np.asarray(self.group_of_x, dtype=bool))
        D = len(xs)
        if ys.shape != (D,) or pr.shape != (D,) or hyp.shape[1] != D:
            raise ValueError("FiniteClassificationTestbed: entry arrays disagree in length")
        if np.any((ys != 0) & (ys != 1)) or np.any((hyp != 0) & (hyp != 1)):
            raise ValueError("FiniteClassificationTestbed: labels and predictions must be 0/1")
        if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-12:
            raise ValueError("FiniteClassificationTestbed: probabilities must sum to 1")
        if xs.min() < 0 or xs.max() >= grp.shape[1]:
            raise ValueError("FiniteClassificationTestbed: feature id outside group table")
        if len(hyp) > MAX_HYPOTHESES:
            raise ValueError("FiniteClassificationTestbed: too many hypotheses")
        measurable = np.ones(len(hyp), bool)
        for x in np.unique(xs):
            cols = hyp[:, xs == x]
            measurable &= np.all(cols == cols[:, :1], axis=1)
        legal = measurable if self.legal is None else np.asarray(self.legal, dtype=bool)
        if legal.shape != (len(hyp),) or not legal.any():
            raise ValueError("FiniteClassificationTestbed: legal mask must select some hypothesis")
        if np.any(legal & ~measurable):
            raise ValueError("FiniteClassificationTestbed: a legal hypothesis must depend on x only")
        for arr in (xs, ys, pr, hyp, grp, legal):
            arr.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "probs", pr)
        object.__setattr__(self, "hypotheses", hyp)
        object.__setattr__(self, "group_of_x", grp)
        object.__setattr__(self, "legal", legal)
        p = self.cell_mass()
        if np.any(p <= 0):
            k, i = np.argwhere(p <= 0)[0]
            raise ValueError(f"FiniteClassificationTestbed: cell (group {k}, y={i}) has no mass")

    @property
    def K(self) -> int:
        return self.group_of_x.shape[0]

    @property
    def n_x(self) -> int:
        return self.group_of_x.shape[1]

    def cell_mass(self) -> np.ndarray:
        g = self.group_of_x[:, self.xs]
        return np.stack([(g * self.probs * (self.ys == i)).sum(axis=1) for i in (0, 1)], axis=1)

    @cached_property
    def stats(self) -> GroupStats:
        return GroupStats(self.cell_mass())

    def rates(self, pred) -> np.ndarray:
        """``[FPR_1..FPR_K, FNR_1..FNR_K]`` of a (possibly randomized) prediction vector over entries."""
        pred = np.asarray(pred, dtype=float)
        batch = np.atleast_2d(pred)
        g = self.group_of_x[:, self.xs] * self.probs
        p = self.cell_mass()
        fpr = batch @ (g * (self.ys == 0)).T / p[:, 0]
        fnr = (1.0 - batch) @ (g * (self.ys == 1)).T / p[:, 1]
        out = np.concatenate([fpr, fnr], axis=1)
        return out if pred.ndim > 1 else out[0]

    @cached_property
    def rate_matrix(self) -> np.ndarray:
        r = np.atleast_2d(self.rates(self.hypotheses.astype(float)))
        r.setflags(write=False)
        return r

    @property
    def legal_indices(self) -> np.ndarray:
        return np.flatnonzero(self.legal)

    def x_table(self, h: int) -> np.ndarray:
        """Prediction per feature id for a legal hypothesis."""
        if not self.legal[h]:
            raise ValueError(f"problems: hypothesis {h} is not a function of x")
        table = np.zeros(self.n_x, dtype=np.int64)
        table[self.xs] = self.hypotheses[h]
        return table

    # data-source protocol used by the learning reductions

    def membership(self, xs) -> np.ndarray:
        return self.group_of_x[:, np.asarray(xs, dtype=np.int64)]

    def exact(self):
        return self.xs, self.ys, self.probs

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        return self.xs[idx], self.ys[idx]

    def as_problem(self) -> FiniteChoiceProblem:
        """Legal hypotheses as a finite choice problem (row j is ``legal_indices[j]``)."""
        return FiniteChoiceProblem(self.rate_matrix[self.legal_indices])

    def erm_learner(self):
        from .learning import FiniteFamilyLearner

        return FiniteFamilyLearner(np.stack([self.x_table(h) for h in self.legal_indices]),
                                   handles=tuple(int(h) for h in self.legal_indices))


LOAN_BAD_START = 3


def make_loan_example(a_f: float = 0.04, a_m: float = 0.8) -> FiniteClassificationTestbed:
    """Loan approvals with groups F and M, each cell (sex, y) carrying mass 1/4.

    Within each sex a fraction ``a`` of the creditworthy applicants is
    recognizably so (feature "high"); everyone else shares feature "low"
    with the non-creditworthy. Feature ids: 0 F-low, 1 F-high, 2 M-low,
    3 M-high.

    Hypotheses: reject all, accept F-high, accept M-high, accept both highs,
    accept all, and the (illegal, label-dependent) perfect classifier.
    Accepting both highs is a non-global local minimum of the folded
    disparity objective from :func:`loan_objective` when
    ``4 a_f (a_m - a_f) / (a_f + a_m)^3 < 1/4``.
    """
    xs = [0, 0, 1, 2, 2, 3]
    ys = [0, 1, 1, 0, 1, 1]
    probs = [0.25, (1 - a_f) / 4, a_f / 4, 0.25, (1 - a_m) / 4, a_m / 4]
    hyps = [
        [0, 0, 0, 0, 0, 0],
        [0, 0, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 1],
        [0, 0, 1, 0, 0, 1],
        [1, 1, 1, 1, 1, 1],
        [0, 1, 1, 0, 1, 1],
    ]
    names = ("reject_all", "accept_f_high", "accept_m_high", "accept_highs", "accept_all", "perfect")
    groups = [[1, 1, 0, 0], [0, 0, 1, 1]]
    return FiniteClassificationTestbed(xs, ys, probs, hyps, groups, names=names)


def loan_objective(testbed: FiniteClassificationTestbed, gamma: float = 25.0,
                   delta: float = 0.01) -> ObjectiveSpec:
    """Approval-share disparity objective with false positives folded in as a penalty."""
    st = testbed.stats
    return fold_constraint(disparity_spec(st, delta), false_positive_mass(st), gamma)


@dataclass(frozen=True)
class RegressionTestbed:
    """Finite regression distribution with an explicit classifier family.

    Attributes
    ----------
    xs, ys, probs : arrays of length D
        Entries ``(x, y)`` with ``y`` in ``[-1, 1]``.
    classifiers : (J, n_x) 0/1 array
        Prediction of each classifier per feature id.
    group_of_x : (K, n_x) bool array
    ws : array of length D, optional
        Example weights in ``[0, 1]`` (default 1).
    """

    xs: np.ndarray
    ys: np.ndarray
    probs: np.ndarray
    classifiers: np.ndarray
    group_of_x: np.ndarray
    ws: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "xs", np.asarray(self.xs, dtype=np.int64))
        object.__setattr__(self, "classifiers", np.atleast_2d(np.asarray(self.classifiers, dtype=np.int64)))
        object.__setattr__(self, "group_of_x", np.atleast_2d(np.asarray(self.group_of_x, dtype=bool)))
        if self.classifiers.shape[1] != self.group_of_x.shape[1]:
            raise ValueError("RegressionTestbed: classifier and group tables disagree on feature ids")
        if self.xs.min() < 0 or self.xs.max() >= self.group_of_x.shape[1]:
            raise ValueError("RegressionTestbed: feature id outside group table")

    @property
    def K(self) -> int:
        return self.group_of_x.shape[0]

    def distribution(self):
        from .learning import ExactRegressionDistribution

        return ExactRegressionDistribution(self.xs, self.ys, self.probs, self.ws,
                                           self.group_of_x[:, self.xs])

    def learner(self):
        from .learning import FiniteFamilyLearner

        return FiniteFamilyLearner(self.classifiers)


# file formats


def problem_from_dict(doc: dict):
    """Build a problem from a parsed document with ``schema`` and ``version`` fields."""
    schema = doc.get("schema")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"problems: unsupported version {version!r} for schema {schema!r}")
    if schema == "finite":
        return FiniteChoiceProblem(np.array(doc["losses"], dtype=float), doc.get("comparison_rows"))
    if schema == "flop":
        weights = doc.get("weights", [1.0] * doc["nodes"])
        if "distance" in doc:
            return FlopInstance(np.array(doc["distance"], dtype=float), weights, doc["groups"], doc["m"])
        return FlopInstance.from_arcs(doc["nodes"], doc["arcs"], weights, doc["groups"], doc["m"],
                                      symmetric=bool(doc.get("symmetric", False)))
    if schema == "testbed":
        entries = np.array(doc["entries"], dtype=float)
        n_x = int(entries[:, 0].max()) + 1
        grp = np.zeros((len(doc["groups"]), n_x), bool)
        for k, members in enumerate(doc["groups"]):
            grp[k, list(members)] = True
        return FiniteClassificationTestbed(entries[:, 0].astype(int), entries[:, 1].astype(int),
                                           entries[:, 2], doc["hypotheses"], grp, doc.get("legal"))
    if schema == "regression":
        entries = np.array(doc["entries"], dtype=float)
        n_x = len(doc["classifiers"][0])
        grp = np.zeros((len(doc["groups"]), n_x), bool)
        for k, members in enumerate(doc["groups"]):
            grp[k, list(members)] = True
        ws = entries[:, 3] if entries.shape[1] > 3 else None
        return RegressionTestbed(entries[:, 0].astype(int), entries[:, 1], entries[:, 2],
                                 doc["classifiers"], grp, ws)
    if schema == "loan_example":
        return make_loan_example(**doc.get("params", {}))
    raise ValueError(f"problems: unknown schema {schema!r}")


def load_problem(path):
    """Read a problem document (YAML or JSON)."""
    import yaml

    text = Path(path).read_text()
    doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValueError(f"problems.load_problem: {path} does not hold a mapping")
    return problem_from_dict(doc)
