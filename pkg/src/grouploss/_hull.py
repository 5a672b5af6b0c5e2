"""Geometry helpers for screening grid points against a finite loss hull.

Used only as an accelerator: a grid point whose certified distance to the
reachable set exceeds the acceptance radius can never be accepted, so it is
skipped without changing the algorithm's output.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import ConvexHull

_RANK_TOL = 1e-10


def upward_vertices(vertices: np.ndarray) -> np.ndarray:
    """Vertices of ``(hull + nonnegative orthant) ∩ [0, 1]^K``.

    Each vertex is copied once per subset of coordinates raised to 1.
    """
    v = np.asarray(vertices, dtype=float)
    k = v.shape[1]
    out = [v]
    for size in range(1, k + 1):
        for subset in itertools.combinations(range(k), size):
            w = v.copy()
            w[:, list(subset)] = 1.0
            out.append(w)
    return np.unique(np.vstack(out), axis=0)


def relaxed_halfspaces(vertices: np.ndarray, radius: float):
    """Halfspaces ``A x <= b`` containing every point within ``radius`` of the hull.

    The hull may be lower dimensional: directions orthogonal to its affine
    span become two-sided slabs of half-width ``radius``.
    """
    v = np.unique(np.asarray(vertices, dtype=float), axis=0)
    k = v.shape[1]
    center = v.mean(axis=0)
    x = v - center
    if len(v) > 1:
        _, s, vt = np.linalg.svd(x, full_matrices=True)
        d = int(np.sum(s > _RANK_TOL * max(1.0, s[0])))
    else:
        vt = np.eye(k)
        d = 0
    span, perp = vt[:d].T, vt[d:].T

    rows, rhs = [], []
    for j in range(perp.shape[1]):
        w = perp[:, j]
        rows += [w, -w]
        rhs += [w @ center + radius, -(w @ center) + radius]
    if d == 1:
        u = span[:, 0]
        z = x @ u
        rows += [u, -u]
        rhs += [u @ center + z.max() + radius, -(u @ center + z.min()) + radius]
    elif d >= 2:
        hull = ConvexHull(x @ span)
        for eq in hull.equations:
            a = span @ eq[:-1]
            rows.append(a)
            rhs.append(a @ center - eq[-1] + radius)
    if not rows:
        return np.zeros((0, k)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def enumerate_candidates(a: np.ndarray, b: np.ndarray, q: float, levels: int, k: int,
                         chunk: int = 1 << 16) -> np.ndarray:
    """Flat C-order indices of grid points ``i * q`` (``i < levels``) with ``A x <= b``.

    The first ``K - 1`` coordinates are enumerated; the feasible range of
    the last coordinate is solved for directly.
    """
    b = b + 1e-9
    a_last = a[:, -1]
    up = a_last > 1e-12
    down = a_last < -1e-12
    flat_rows = a_last.copy()
    flat_rows[up | down] = 0
    zero = ~(up | down)

    n_prefix = levels ** (k - 1)
    out = []
    for start in range(0, n_prefix, chunk):
        idx = np.arange(start, min(start + chunk, n_prefix))
        if k > 1:
            prefix = np.stack(np.unravel_index(idx, (levels,) * (k - 1)), axis=1) * q
            slack = b[None, :] - prefix @ a[:, :-1].T
        else:
            slack = np.broadcast_to(b, (1, len(b))).copy()
        ok = np.all(slack[:, zero] >= 0, axis=1) if zero.any() else np.ones(len(idx), bool)
        hi = np.full(len(idx), levels - 1, dtype=np.int64)
        lo = np.zeros(len(idx), dtype=np.int64)
        if up.any():
            top = np.min(slack[:, up] / a_last[up], axis=1)
            hi = np.minimum(hi, np.floor(top / q + 1e-9).clip(-1, levels).astype(np.int64))
        if down.any():
            bottom = np.max(slack[:, down] / a_last[down], axis=1)
            lo = np.maximum(lo, np.ceil(bottom / q - 1e-9).clip(-1, levels).astype(np.int64))
        ok &= hi >= lo
        if not ok.any():
            continue
        base, lo, hi = idx[ok] * levels, lo[ok], hi[ok]
        counts = hi - lo + 1
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        out.append(np.repeat(base + lo, counts) + offsets)
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(out)


def distance_lower_bounds(vertices: np.ndarray, points: np.ndarray, iters: int = 200) -> np.ndarray:
    """Certified lower bounds on the distance from each point to ``conv(vertices)``.

    Runs Frank-Wolfe with exact line search on ``||x - r||^2`` for all points
    at once and keeps the best dual bound ``f(x) - gap(x)`` seen.
    """
    v = np.asarray(vertices, dtype=float)
    r = np.asarray(points, dtype=float)
    d0 = ((r[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
    x = v[np.argmin(d0, axis=1)].copy()
    best = np.zeros(len(r))
    for _ in range(iters):
        g = x - r
        val = (g * g).sum(axis=1)
        s = v[np.argmin(g @ v.T, axis=1)]
        d = s - x
        gap = -2.0 * (g * d).sum(axis=1)
        best = np.maximum(best, val - gap)
        if np.all((gap <= 1e-12) | (best >= val - 1e-12)):
            break
        dd = (d * d).sum(axis=1)
        step = np.where(dd > 0, np.clip(-(g * d).sum(axis=1) / np.where(dd > 0, dd, 1), 0, 1), 0)
        x = x + step[:, None] * d
    return np.sqrt(np.maximum(best, 0.0))
