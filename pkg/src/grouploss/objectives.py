"""Objectives over group loss vectors, rate transforms and constraint folding.

Classification loss vectors are laid out as ``[FPR_1..FPR_K, FNR_1..FNR_K]``.
Every value function accepts a single vector or an ``(n, dim)`` batch.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


class UndefinedRate(ValueError):
    """A rate ratio has a zero denominator (use the smoothed variant)."""


@dataclass(frozen=True)
class ObjectiveSpec:
    """An objective with its declared Lipschitz constant.

    Attributes
    ----------
    value : callable
        ``(..., dim) -> (...)``.
    subgradient : callable or None
        Single vector to a subgradient vector.
    lipschitz : float
        Euclidean Lipschitz constant over the box.
    nondecreasing : bool
        True when ``value`` is coordinatewise nondecreasing.
    """

    value: Callable
    subgradient: Optional[Callable] = None
    lipschitz: float = 1.0
    nondecreasing: bool = False
    vectorized: bool = True
    name: str = "objective"

    def __call__(self, l):
        return self.value(l)

    def scaled(self, c: float) -> "ObjectiveSpec":
        """``c * f``, with the Lipschitz constant and subgradient scaled to match."""
        if c <= 0:
            raise ValueError("scale must be positive")
        value, grad = self.value, self.subgradient
        return replace(
            self,
            value=lambda l: c * value(l),
            subgradient=None if grad is None else (lambda l: c * np.asarray(grad(l))),
            lipschitz=c * self.lipschitz,
        )


@dataclass(frozen=True)
class GroupStats:
    """Cell probabilities ``p[k, i] = Pr[x in group k and y = i]``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"GroupStats: p must have shape (K, 2), got {p.shape}")
        if np.any(p <= 0) or np.any(p > 1):
            raise ValueError("GroupStats: every cell probability must lie in (0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def K(self) -> int:
        return self.p.shape[0]

    @property
    def p_min(self) -> float:
        return float(self.p.min())

    @property
    def p0(self) -> np.ndarray:
        return self.p[:, 0]

    @property
    def p1(self) -> np.ndarray:
        return self.p[:, 1]


def split_rates(l, K: int):
    """Split ``[FPR, FNR]`` vectors into their two halves."""
    l = np.asarray(l, dtype=float)
    return l[..., :K], l[..., K:]


def _f1(a, b, p0, p1):
    # F1 = 2 PRE REC / (PRE + REC) simplified with PRE = a = 1 - FNR, b = FPR
    return 2.0 * p1 * a / (p1 * (1.0 + a) + p0 * b)


def group_rates(fpr, fnr, stats: GroupStats):
    """Per-group error, precision, recall and F1 from false positive/negative rates.

    Returns
    -------
    dict with keys ``"ERR"``, ``"PRE"``, ``"REC"``, ``"F1"``.

    Raises
    ------
    UndefinedRate
        When a group's false negative rate is 1, making recall or F1 0/0.
    """
    fpr = np.asarray(fpr, dtype=float)
    fnr = np.asarray(fnr, dtype=float)
    p0, p1 = stats.p0, stats.p1
    err = (p0 * fpr + p1 * fnr) / (p0 + p1)
    pre = 1.0 - fnr
    den = p1 * pre + p0 * fpr
    if np.any(pre <= 0):
        k = int(np.argmax(pre <= 0))
        raise UndefinedRate(f"objectives.group_rates: group {k} has FNR=1, F1 is undefined")
    rec = p1 * pre / den
    f1 = 2.0 * pre * rec / (pre + rec)
    return {"ERR": err, "PRE": pre, "REC": rec, "F1": f1}


def smoothed_f1(fpr, fnr, stats: GroupStats, eta: float) -> np.ndarray:
    """F1 per group, linearly tapered to 0 over ``FNR in [1 - eta, 1]``.

    Agrees with F1 wherever ``FNR <= 1 - eta``.
    """
    if not 0.0 < eta < 0.5:
        raise ValueError("objectives.smoothed_f1: eta must lie in (0, 0.5)")
    fpr = np.asarray(fpr, dtype=float)
    fnr = np.asarray(fnr, dtype=float)
    p0, p1 = stats.p0, stats.p1
    a = 1.0 - fnr
    exact = _f1(np.maximum(a, eta), fpr, p0, p1)
    edge = _f1(eta, fpr, p0, p1) * np.clip(a, 0.0, None) / eta
    return np.where(a >= eta, exact, edge)


def smoothed_f1_lipschitz(stats: GroupStats) -> np.ndarray:
    """Per-group Lipschitz constants of :func:`smoothed_f1` in ``(FPR_k, FNR_k)``."""
    p0, p1 = stats.p0, stats.p1
    return np.sqrt((2 * (p0 + p1) / p1) ** 2 + (2 * p0 / p1) ** 2)


def approval_shares(fpr, fnr, stats: GroupStats, delta: float) -> np.ndarray:
    """Share of approvals going to each group, ``n_k / max(sum_j n_j, delta)``."""
    fpr = np.asarray(fpr, dtype=float)
    fnr = np.asarray(fnr, dtype=float)
    n = stats.p0 * fpr + stats.p1 * (1.0 - fnr)
    d = np.maximum(n.sum(axis=-1, keepdims=True), delta)
    return n / d


def disparity_objective(fpr, fnr, stats: GroupStats, delta: float):
    """Total error plus squared approval-share gaps over unordered group pairs.

    Groups are assumed to partition the population, so total error is
    ``sum_k p_k^0 FPR_k + p_k^1 FNR_k``.
    """
    if delta <= 0:
        raise ValueError("objectives.disparity_objective: delta must be positive")
    fpr = np.asarray(fpr, dtype=float)
    fnr = np.asarray(fnr, dtype=float)
    err = (stats.p0 * fpr + stats.p1 * fnr).sum(axis=-1)
    s = approval_shares(fpr, fnr, stats, delta)
    K = stats.K
    gap = np.zeros_like(err)
    for i in range(K):
        for j in range(i + 1, K):
            gap = gap + (s[..., i] - s[..., j]) ** 2
    return err + gap


def disparity_spec(stats: GroupStats, delta: float) -> ObjectiveSpec:
    K = stats.K
    pk = np.sqrt(stats.p0 ** 2 + stats.p1 ** 2).max()
    lip = float(np.linalg.norm(stats.p) + 2 * (K - 1) * math.sqrt(K) * (1 + math.sqrt(K)) / delta * pk)

    def value(l):
        fpr, fnr = split_rates(l, K)
        return disparity_objective(fpr, fnr, stats, delta)

    return ObjectiveSpec(value, None, lip, False, name="disparity")


def false_positive_mass(stats: GroupStats) -> ObjectiveSpec:
    """``Pr[c(x) = 1 and y = 0] = sum_k p_k^0 FPR_k``, linear in the rates."""
    w = np.concatenate([stats.p0, np.zeros(stats.K)])
    return linear(w)


def linear(w) -> ObjectiveSpec:
    """``w . l``."""
    w = np.asarray(w, dtype=float)
    return ObjectiveSpec(lambda l: np.asarray(l, dtype=float) @ w, lambda l: w.copy(),
                         float(np.linalg.norm(w)), bool(np.all(w >= 0)), name="linear")


def max_loss(n: int) -> ObjectiveSpec:
    """``max_k l_k``."""
    return maxmin_blend(0.0, n)


def squared_distance(z) -> ObjectiveSpec:
    """``||l - z||^2`` on the unit box (Lipschitz ``2 sqrt(n)``)."""
    z = np.asarray(z, dtype=float)
    ones = np.ones(len(z))
    return ObjectiveSpec(lambda l: ((np.asarray(l, dtype=float) - z) ** 2) @ ones,
                         lambda l: 2.0 * (np.asarray(l, dtype=float) - z),
                         2.0 * math.sqrt(len(z)), False, name="squared_distance")


def fold_gamma(R: float, epsilon: float, delta: float) -> float:
    """Penalty weight ``(R + eps) / delta`` that enforces ``g <= delta``."""
    return (R + epsilon) / delta


def fold_constraint(f: ObjectiveSpec, g: ObjectiveSpec, gamma: float) -> ObjectiveSpec:
    """``f + gamma * max(0, g)``."""
    if gamma <= 0:
        raise ValueError("objectives.fold_constraint: gamma must be positive")

    def value(l):
        return f.value(l) + gamma * np.maximum(0.0, g.value(l))

    grad = None
    if f.subgradient is not None and g.subgradient is not None:
        def grad(l):
            out = np.asarray(f.subgradient(l), dtype=float)
            if g.value(l) >= 0:
                out = out + gamma * np.asarray(g.subgradient(l), dtype=float)
            return out

    return ObjectiveSpec(value, grad, f.lipschitz + gamma * g.lipschitz,
                         f.nondecreasing and g.nondecreasing, name=f"fold({f.name})")


def linear_constraints(U, b) -> ObjectiveSpec:
    """``g(l) = max_i (u_i . l - b_i)``; ``g <= 0`` encodes every row."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(b) != len(U):
        raise ValueError("objectives.linear_constraints: U and b disagree in length")

    def value(l):
        return (np.asarray(l, dtype=float) @ U.T - b).max(axis=-1)

    def grad(l):
        return U[int(np.argmax(U @ np.asarray(l, dtype=float) - b))].copy()

    return ObjectiveSpec(value, grad, float(np.linalg.norm(U, axis=1).max()),
                         bool(np.all(U >= 0)), name="linear_constraints")


def maxmin_blend(lam: float, n: int) -> ObjectiveSpec:
    """``lam * sum(l) + (1 - lam) * max(l)``.

    The subgradient puts the ``1 - lam`` mass on the first maximizing
    coordinate only, which keeps it a valid subgradient at ties.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("objectives.maxmin_blend: lambda must lie in [0, 1]")

    ones = np.ones(n)

    def value(l):
        l = np.asarray(l, dtype=float)
        # column-wise reductions are much faster than axis=-1 on short rows
        top = functools.reduce(np.maximum, np.moveaxis(l, -1, 0))
        return lam * (l @ ones) + (1.0 - lam) * top

    def grad(l):
        l = np.asarray(l, dtype=float)
        g = np.full(l.shape, lam)
        g[int(np.argmax(l))] += 1.0 - lam
        return g

    return ObjectiveSpec(value, grad, lam * math.sqrt(n) + (1.0 - lam), True,
                         name=f"maxmin_blend({lam})")


def _pair_abs_sum(l):
    l = np.asarray(l, dtype=float)
    return np.abs(l[..., :, None] - l[..., None, :]).sum(axis=(-1, -2))


def gini(l, n: Optional[int] = None):
    """Gini index ``sum_{i,j} |l_i - l_j| / (2 n sum_i l_i)``; 0 when all losses are 0."""
    l = np.asarray(l, dtype=float)
    n = l.shape[-1] if n is None else n
    tot = l.sum(axis=-1)
    num = _pair_abs_sum(l)
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, num / (2.0 * n * safe), 0.0)


def gini_constraint(theta: float, n: int, normalize: bool = True) -> ObjectiveSpec:
    """Convex level set ``sum_{i,j} |l_i - l_j| - 2 n theta sum(l) <= 0`` of ``G <= theta``.

    With ``normalize`` the function is divided by ``2 n (1 + theta)`` so its
    subgradients lie in ``[-1, 1]``; the zero level set is unchanged.
    """
    if theta < 0:
        raise ValueError("objectives.gini_constraint: theta must be nonnegative")
    c = 1.0 / (2.0 * n * (1.0 + theta)) if normalize else 1.0

    def value(l):
        l = np.asarray(l, dtype=float)
        return c * (_pair_abs_sum(l) - 2.0 * n * theta * l.sum(axis=-1))

    def grad(l):
        l = np.asarray(l, dtype=float)
        s = np.sign(l[:, None] - l[None, :]).sum(axis=1)
        return c * (2.0 * s - 2.0 * n * theta)

    lip = c * math.sqrt(n) * (2.0 * (n - 1) + 2.0 * n * theta)
    return ObjectiveSpec(value, grad, lip, False, name=f"gini_constraint({theta})")


def laplace_smooth(counts, totals, alpha: float):
    """Smoothed rates ``(count + alpha) / (total + 2 alpha)``."""
    if alpha <= 0:
        raise ValueError("objectives.laplace_smooth: alpha must be positive")
    counts = np.asarray(counts, dtype=float)
    totals = np.asarray(totals, dtype=float)
    return (counts + alpha) / (totals + 2.0 * alpha)


def build_objective(name: str, K: int, params: Optional[dict] = None,
                    stats: Optional[GroupStats] = None) -> ObjectiveSpec:
    """Look up an objective by name, as used by configuration files."""
    params = dict(params or {})
    if name == "linear":
        return linear(params.get("w", np.ones(K)))
    if name == "max":
        return max_loss(K)
    if name == "maxmin_blend":
        return maxmin_blend(float(params.get("lam", 0.5)), K)
    if name == "squared_distance":
        return squared_distance(params.get("z", np.full(K, 0.5)))
    if name == "gini":
        n = K

        def value(l):
            return gini(l, n)

        return ObjectiveSpec(value, None, float("inf"), False, name="gini")
    if name == "disparity":
        if stats is None:
            raise ValueError("objectives.build_objective: disparity needs group statistics")
        f = disparity_spec(stats, float(params.get("delta", 0.01)))
        if "gamma" in params:
            f = fold_constraint(f, false_positive_mass(stats), float(params["gamma"]))
        return f
    raise ValueError(f"objectives.build_objective: unknown objective {name!r}")
