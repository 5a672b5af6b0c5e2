"""Grid-search-plus-projection minimization of a Lipschitz function of group losses.

Grid points are visited in increasing objective order. For each one a
Frank-Wolfe style loop drives the average loss of the chosen choices toward
the point; the first point the loop gets close enough to wins, and the
uniform mixture over that loop's choices is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _hull
from .core import (
    ContractViolation,
    CountingCache,
    LinearOptimizer,
    LossAssessor,
    Mixture,
    caratheodory_reduce,
)

GRID_BUDGET = 20_000_000
_SCREEN_BATCH = 4096


class GridBudgetExceeded(RuntimeError):
    """The requested grid is too large to materialize."""


class NoGridPointAccepted(ContractViolation):
    """No grid point passed the acceptance test.

    Under valid oracle contracts this cannot happen, so it signals that the
    linear optimizer or loss assessor broke its tolerance promise.
    """

    def __init__(self, message, *, visited=0, screened=0, best_distance=math.inf, best_point=None):
        super().__init__(message)
        self.visited = visited
        self.screened = screened
        self.best_distance = best_distance
        self.best_point = best_point


class ProjectionAborted(RuntimeError):
    """An oracle failed inside the projection loop; carries the partial trace."""

    def __init__(self, message, *, step, atoms, distances):
        super().__init__(message)
        self.step = step
        self.atoms = atoms
        self.distances = distances


@dataclass(frozen=True)
class Schedule:
    """Step sizes derived from the target accuracy and the number of groups."""

    epsilon: float
    K: int
    beta: float
    q: float
    tau: float
    T: int

    @property
    def levels(self) -> int:
        """Grid values per coordinate, ``floor(1/q) + 1``."""
        return int(math.floor(1.0 / self.q + 1e-12)) + 1

    @property
    def grid_size(self) -> int:
        return self.levels ** self.K

    @property
    def accept_radius(self) -> float:
        return 3.0 * self.beta

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "K": self.K, "beta": self.beta, "q": self.q,
                "tau": self.tau, "T": self.T, "levels": self.levels,
                "grid_size": self.grid_size}


def compute_schedule(epsilon: float, K: int) -> Schedule:
    """Return ``beta = eps/5``, ``q = beta/sqrt(K)``, ``tau = beta^2/sqrt(K)`` and
    ``T = ceil((K/beta^2) ln(K/beta^2))``.

    Examples
    --------
    >>> compute_schedule(1.0, 1).T
    81
    """
    if not (isinstance(K, (int, np.integer)) and K >= 1):
        raise ValueError(f"groupopt.compute_schedule: K must be a positive integer, got {K!r}")
    epsilon = float(epsilon)
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"groupopt.compute_schedule: epsilon must lie in (0, 1], got {epsilon}")
    K = int(K)
    beta = epsilon / 5.0
    q = beta / math.sqrt(K)
    tau = beta ** 2 / math.sqrt(K)
    ratio = K / beta ** 2
    T = max(1, math.ceil(ratio * math.log(ratio)))
    return Schedule(epsilon, K, beta, q, tau, T)


def _eval(f, points: np.ndarray) -> np.ndarray:
    if getattr(f, "vectorized", False):
        vals = np.asarray(f(points), dtype=float).reshape(-1)
    else:
        vals = np.array([float(f(p)) for p in points])
    if not np.all(np.isfinite(vals)):
        bad = points[np.argmax(~np.isfinite(vals))]
        raise ValueError(f"groupopt: objective is non-finite at grid point {bad}")
    return vals


@dataclass
class Grid:
    """Grid ``{0, q, ..., (levels-1) q}^K`` in objective order.

    ``indices`` are flat C-order indices (so increasing index is
    lexicographic order of coordinates). When built from a candidate subset
    only those points are stored, but ``size`` still counts the full grid.
    """

    q: float
    levels: int
    K: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def size(self) -> int:
        return self.levels ** self.K

    def coords(self, flat) -> np.ndarray:
        flat = np.asarray(flat)
        idx = np.stack(np.unravel_index(flat, (self.levels,) * self.K), axis=-1)
        return idx * self.q

    @property
    def points(self) -> np.ndarray:
        return self.coords(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


def build_sorted_grid(f, schedule: Schedule, K: Optional[int] = None, *,
                      candidates: Optional[np.ndarray] = None,
                      budget: int = GRID_BUDGET) -> Grid:
    """Evaluate ``f`` on the grid and sort ascending, ties broken lexicographically.

    ``candidates`` restricts the stored points to a subset of flat indices;
    their relative order is the same as in the full sorted grid.
    """
    K = schedule.K if K is None else K
    if K != schedule.K:
        raise ValueError(f"groupopt.build_sorted_grid: K={K} but schedule has K={schedule.K}")
    levels = schedule.levels
    if candidates is None:
        if levels ** K > budget:
            raise GridBudgetExceeded(
                f"groupopt.build_sorted_grid: {levels}^{K} = {levels ** K} grid points exceeds "
                f"budget {budget}; supply a reachable set to enable screening")
        flat = np.arange(levels ** K, dtype=np.int64)
    else:
        flat = np.unique(np.asarray(candidates, dtype=np.int64))
        if len(flat) > budget:
            raise GridBudgetExceeded(
                f"groupopt.build_sorted_grid: {len(flat)} candidate points exceeds budget {budget}")
    grid = Grid(schedule.q, levels, K, flat, np.empty(0))
    vals = np.empty(len(flat))
    step = 1 << 18
    for s in range(0, len(flat), step):
        vals[s:s + step] = _eval(f, grid.coords(flat[s:s + step]))
    order = np.lexsort((flat, vals))
    grid.indices = flat[order]
    grid.values = vals[order]
    return grid


def detect_monotone(f, grid: Grid, block: int = 1 << 16) -> int:
    """Return 1 if ``f(r) <= f(r + q e_k)`` for all grid-adjacent pairs, else 0.

    Scans the full grid in blocks and stops at the first violation.
    """
    levels, K = grid.levels, grid.K
    shape = (levels,) * K
    total = levels ** K
    for s in range(0, total, block):
        flat = np.arange(s, min(s + block, total))
        idx = np.stack(np.unravel_index(flat, shape), axis=1)
        base = _eval(f, idx * grid.q)
        for k in range(K):
            ok = idx[:, k] < levels - 1
            if not ok.any():
                continue
            nxt = idx[ok].copy()
            nxt[:, k] += 1
            if np.any(_eval(f, nxt * grid.q) < base[ok]):
                return 0
    return 1


@dataclass
class ProjectionResult:
    l_hat: np.ndarray
    atoms: list
    accepted: bool
    distances: np.ndarray = field(repr=False)

    @property
    def distance(self) -> float:
        return float(self.distances[-1])


def project_toward(r, N: int, schedule: Schedule, M: LinearOptimizer, assess,
                   *, sink: Optional[Callable] = None) -> ProjectionResult:
    """Run the projection loop toward grid point ``r`` for exactly ``T`` steps.

    Starting from ``c_1 = M(0)``, each step sets
    ``l_hat_t = max(mean assessed loss of c_1..c_t, N r)`` and
    ``c_{t+1} = M(l_hat_t - r)``. The point is accepted when
    ``||l_hat_T - r|| <= 3 beta``.

    Parameters
    ----------
    assess : callable
        Loss assessor; wrap it in :class:`CountingCache` to memoize across
        calls.
    sink : callable, optional
        Receives ``distances`` (``||l_hat_t - r||`` for ``t = 1..T``).
    """
    r = np.asarray(r, dtype=float)
    if N not in (0, 1):
        raise ValueError("groupopt.project_toward: N must be 0 or 1")
    if M.mode == "nonnegative" and N != 1:
        raise ContractViolation(
            "groupopt.project_toward: nonnegative optimizer requires the monotone clamp (N=1)")
    T = schedule.T
    distances = np.empty(T)
    atoms: list = []
    t = 0
    try:
        c = M(np.zeros_like(r))
        atoms.append(c)
        total = np.array(assess(c), dtype=float)
        if total.shape != r.shape:
            raise ContractViolation(
                f"groupopt.project_toward: assessor returned shape {total.shape}, expected {r.shape}")
        for t in range(1, T + 1):
            l_hat = total / t
            if N:
                np.maximum(l_hat, r, out=l_hat)
            diff = l_hat - r
            distances[t - 1] = math.sqrt(diff @ diff)
            if t == T:
                break
            c = M(diff)
            atoms.append(c)
            total += assess(c)
    except ContractViolation:
        raise
    except Exception as exc:
        raise ProjectionAborted(
            f"groupopt.project_toward: oracle failed at step {t}: {exc}",
            step=t, atoms=atoms, distances=distances[:max(t - 1, 0)].copy()) from exc
    accepted = bool(distances[-1] <= schedule.accept_radius)
    if sink is not None:
        sink(distances)
    return ProjectionResult(l_hat, atoms, accepted, distances)


@dataclass
class GroupOptRun:
    """Everything a run produced, for auditing against the schedule's budgets."""

    mixture: Mixture
    schedule: Schedule
    N: int
    point: np.ndarray
    point_value: float
    rank: int
    visited: int
    screened: int
    optimizer_calls: int
    assessor_calls: int
    l_hat: np.ndarray


class _CountingOptimizer:
    def __init__(self, M: LinearOptimizer):
        self.M = M
        self.mode = M.mode
        self.calls = 0

    def __call__(self, w):
        self.calls += 1
        return self.M(w)


def solve_group_opt(epsilon: float, f, assess: LossAssessor, M: LinearOptimizer, K: int,
                    *, reachable: Optional[np.ndarray] = None,
                    screen: Optional[Callable] = None,
                    trace: Optional[Callable] = None,
                    budget: int = GRID_BUDGET) -> GroupOptRun:
    """Run the full grid search and return the run record.

    Parameters
    ----------
    f : callable
        Objective on ``[0, 1]^K``, assumed 1-Lipschitz. If it has a true
        ``vectorized`` attribute it is called on ``(n, K)`` arrays.
    reachable : array, optional
        Exact loss vectors of every choice ``M`` can return. Enables
        screening: grid points certified farther than ``3 beta + tau`` from
        the reachable hull are skipped, which cannot change the result.
    screen : callable, optional
        ``screen(points) -> lower bounds`` on the distance from each grid
        point to the achievable set (its upward closure when ``f`` is
        nondecreasing). Used like ``reachable`` when no finite loss table
        exists; the bounds must be certified.
    trace : callable, optional
        ``trace(rank, r, f_r, distances)`` for each visited grid point.
    """
    sched = compute_schedule(epsilon, K)
    radius = sched.accept_radius + sched.tau
    full = Grid(sched.q, sched.levels, K, np.zeros(0, np.int64), np.zeros(0))
    N = detect_monotone(f, full)
    if M.mode == "nonnegative" and N == 0:
        raise ContractViolation(
            "groupopt.group_opt: objective is not nondecreasing on the grid, "
            "but the linear optimizer only accepts nonnegative weights")

    screen_v = None
    candidates = None
    if reachable is not None:
        screen_v = np.asarray(reachable, dtype=float).reshape(-1, K)
        if N:
            screen_v = _hull.upward_vertices(screen_v)
        a, b = _hull.relaxed_halfspaces(screen_v, radius)
        candidates = _hull.enumerate_candidates(a, b, sched.q, sched.levels, K)
    grid = build_sorted_grid(f, sched, K, candidates=candidates, budget=budget)

    cache = assess if isinstance(assess, CountingCache) else CountingCache(assess)
    counted = _CountingOptimizer(M)
    visited = screened = 0
    best = (math.inf, None)
    pts_all = grid.indices
    for start in range(0, len(pts_all), _SCREEN_BATCH):
        pts = grid.coords(pts_all[start:start + _SCREEN_BATCH])
        if screen_v is not None:
            lower = _hull.distance_lower_bounds(screen_v, pts)
            keep = lower <= radius + 1e-9
        elif screen is not None:
            keep = np.asarray(screen(pts), dtype=float) <= radius + 1e-9
        else:
            keep = np.ones(len(pts), bool)
        for j in range(len(pts)):
            if not keep[j]:
                screened += 1
                continue
            rank = start + j
            r = pts[j]
            res = project_toward(r, N, sched, counted, cache)
            visited += 1
            if trace is not None:
                trace(rank, r, float(grid.values[rank]), res.distances)
            if res.distance < best[0]:
                best = (res.distance, r)
            if res.accepted:
                mix = Mixture.uniform(res.atoms)
                losses = [cache(c) for c in mix.choices]
                mix = caratheodory_reduce(mix, losses)
                return GroupOptRun(mix, sched, N, r, float(grid.values[rank]), rank, visited,
                                   screened, counted.calls, cache.calls, res.l_hat)
    raise NoGridPointAccepted(
        f"groupopt.group_opt: none of {grid.size} grid points accepted "
        f"(visited {visited}, screened {screened}, closest {best[0]:.6g}); "
        "an oracle broke its tolerance contract",
        visited=visited, screened=screened, best_distance=best[0], best_point=best[1])


def group_opt(epsilon: float, f, assess: LossAssessor, M: LinearOptimizer, K: int,
              **kwargs) -> Mixture:
    """Return a mixture whose loss nearly minimizes ``f`` (see :func:`solve_group_opt`)."""
    return solve_group_opt(epsilon, f, assess, M, K, **kwargs).mixture
