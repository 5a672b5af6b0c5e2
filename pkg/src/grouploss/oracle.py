"""Independent ground truth: exhaustive search over the mixture simplex and
certified Euclidean projection onto a finite hull.

Nothing here shares code with the algorithms under test.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .core import Mixture

ENUM_BUDGET = 120_000_000
_CHUNK = 1 << 20


class OracleBudgetExceeded(RuntimeError):
    pass


class OracleDidNotConverge(RuntimeError):
    pass


def _rows_of(prob) -> np.ndarray:
    if hasattr(prob, "loss_points"):
        return np.asarray(prob.loss_points(), dtype=float)
    return np.atleast_2d(np.asarray(prob, dtype=float))


def _f_batch(f, L: np.ndarray) -> np.ndarray:
    if getattr(f, "vectorized", False):
        return np.asarray(f(L), dtype=float).reshape(-1)
    return np.array([float(f(l)) for l in L])


def n_compositions(total: int, parts: int) -> int:
    return math.comb(total + parts - 1, parts - 1)


@lru_cache(maxsize=512)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int32)
    if parts == 2:
        a = np.arange(total, -1, -1, dtype=np.int32)
        return np.stack([a, total - a], axis=1)
    blocks = []
    for first in range(total, -1, -1):
        rest = _compositions(total - first, parts - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, np.int32), rest]))
    return np.vstack(blocks)


def brute_force_min(f, prob, resolution: float = 0.01, budget: int = ENUM_BUDGET):
    """Minimize ``f`` over every mixture whose weights are multiples of ``resolution``.

    Returns
    -------
    value : float
    mixture : Mixture
        Witness over row indices.
    """
    P = _rows_of(prob)
    m = len(P)
    steps = int(round(1.0 / resolution))
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise ValueError(f"oracle.brute_force_min: 1/resolution must be an integer, got {resolution}")
    count = n_compositions(steps, m)
    if count > budget:
        raise OracleBudgetExceeded(
            f"oracle.brute_force_min: {count} simplex points for {m} rows exceeds budget {budget}")
    best_val, best_w = math.inf, None
    if m <= 3:
        W = _compositions(steps, m)
        vals = _f_batch(f, (W @ P) / steps)
        j = int(np.argmin(vals))
        best_val, best_w = float(vals[j]), W[j] / steps
    else:
        # loss = head @ P[:-3] + tail @ P[-3:]; tail losses depend only on the tail's total
        tails = [_compositions(t, 3) @ P[-3:] / steps for t in range(steps + 1)]
        heads = _compositions(steps, m - 2)
        slack = heads[:, -1]
        base = heads[:, :-1] @ P[:-3] / steps
        sizes = (slack + 1) * (slack + 2) // 2
        ends = np.cumsum(sizes)
        start = 0
        while start < len(heads):
            stop = max(start + 1, int(np.searchsorted(ends, ends[start] - sizes[start] + _CHUNK)))
            block = np.concatenate([tails[t] for t in slack[start:stop]])
            block += np.repeat(base[start:stop], sizes[start:stop], axis=0)
            vals = _f_batch(f, block)
            j = int(np.argmin(vals))
            if vals[j] < best_val:
                i = start + int(np.searchsorted(ends[start:stop] - ends[start] + sizes[start], j,
                                                side="right"))
                k = j - int(ends[i] - sizes[i] - (ends[start] - sizes[start]))
                best_val = float(vals[j])
                best_w = np.concatenate([heads[i, :-1], _compositions(int(slack[i]), 3)[k]]) / steps
            start = stop
    mix = Mixture(tuple((float(w), i) for i, w in enumerate(best_w) if w > 0))
    return best_val, mix


def _away_step_fw(P: np.ndarray, r: np.ndarray, tol: float, max_iter: int):
    """Minimize ``||x - r||^2`` over ``conv(P)`` with away steps and exact line search."""
    m = len(P)
    lam = np.zeros(m)
    start = int(np.argmin(((P - r) ** 2).sum(axis=1)))
    lam[start] = 1.0
    x = P[start].copy()
    gap = math.inf
    for _ in range(max_iter):
        g = 2.0 * (x - r)
        scores = P @ g
        s = int(np.argmin(scores))
        gap = float(g @ x - scores[s])
        if gap <= tol:
            return x, lam, gap
        active = np.flatnonzero(lam > 0)
        a = int(active[np.argmax(scores[active])])
        fw_step = gap >= scores[a] - g @ x
        if fw_step:
            d = P[s] - x
            gmax = 1.0
        else:
            d = x - P[a]
            gmax = lam[a] / (1.0 - lam[a]) if lam[a] < 1.0 else math.inf
        dd = float(d @ d)
        if dd == 0.0:
            return x, lam, gap
        gamma = min(max(-(g @ d) / (2.0 * dd), 0.0), gmax)
        if fw_step:
            lam *= 1.0 - gamma
            lam[s] += gamma
        else:
            lam *= 1.0 + gamma
            lam[a] -= gamma
            if gamma == gmax:
                lam[a] = 0.0
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum()
        x = lam @ P
    raise OracleDidNotConverge(
        f"oracle.exact_projection: gap {gap:.3g} above {tol:g} after {max_iter} iterations")


def exact_projection(r, prob, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Squared distance from ``r`` to the hull of the problem's loss points.

    Returns
    -------
    dist2 : float
        Certified: ``dist2 - gap`` is a lower bound on the true value.
    mixture : Mixture
        Witness over row indices.
    gap : float
    """
    P = _rows_of(prob)
    if len(P) > 1000:
        raise ValueError("oracle.exact_projection: at most 1000 rows supported")
    r = np.asarray(r, dtype=float)
    x, lam, gap = _away_step_fw(P, r, tol, max_iter)
    mix = Mixture(tuple((float(w), i) for i, w in enumerate(lam) if w > 0))
    return float(((x - r) ** 2).sum()), mix, gap


def regression_oracle(preds: np.ndarray, y: np.ndarray, weights: np.ndarray, B: float,
                      tol: float = 1e-10):
    """Minimum of ``sum_i weights_i (y_i - sum_j a_j preds[j, i])^2`` over ``||a||_1 <= B``.

    ``weights`` are probability-times-example-weight masses. Solved as a
    projection onto the hull of the scaled, signed classifiers.

    Returns
    -------
    value : float
    coef : ndarray
    gap : float
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    root = np.sqrt(np.asarray(weights, dtype=float))
    V = np.vstack([B * preds, -B * preds]) * root
    target = np.asarray(y, dtype=float) * root
    x, lam, gap = _away_step_fw(V, target, tol, 1_000_000)
    J = len(preds)
    coef = B * (lam[:J] - lam[J:])
    return float(((x - target) ** 2).sum()), coef, gap


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def local_descent(f, prob, start, step: float = 0.05, iters: int = 5000, h: float = 1e-7):
    """Projected gradient descent on mixture weights, from ``start``.

    ``start`` is a row index or a weight vector. Gradients are central
    differences of ``f`` in loss space, chained through the loss table;
    steps are backtracked until they decrease ``f``.

    Returns
    -------
    value : float
    weights : ndarray
    """
    P = _rows_of(prob)
    m, K = P.shape
    if np.isscalar(start):
        lam = np.zeros(m)
        lam[int(start)] = 1.0
    else:
        lam = _project_simplex(np.asarray(start, dtype=float))

    def fval(w):
        return float(_f_batch(f, (w @ P)[None, :])[0])

    cur = fval(lam)
    eye = np.eye(K) * h
    for _ in range(iters):
        x = lam @ P
        probes = np.vstack([x + eye, x - eye])
        v = _f_batch(f, probes)
        grad = P @ ((v[:K] - v[K:]) / (2 * h))
        eta = step
        moved = False
        while eta > 1e-12:
            cand = _project_simplex(lam - eta * grad)
            val = fval(cand)
            if val < cur - 1e-15:
                lam, cur, moved = cand, val, True
                break
            eta *= 0.5
        if not moved:
            break
    return cur, lam
