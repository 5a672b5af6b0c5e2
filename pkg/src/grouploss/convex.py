"""Convex objectives: conditional-gradient minimization through the linear
optimizer, and constrained minimization by penalty blending."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ContractViolation, CountingCache, LinearOptimizer, Mixture


@dataclass
class FrankWolfeResult:
    """Output of :func:`solve_frank_wolfe`.

    ``lower_bound`` is a certified lower bound on the optimum over the
    comparison set; ``value - lower_bound`` bounds the suboptimality of the
    returned mixture (against assessed losses).
    """

    mixture: Mixture
    loss: np.ndarray
    value: float
    lower_bound: float
    iterations: int
    converged: bool
    optimizer_calls: int

    @property
    def gap(self) -> float:
        return self.value - self.lower_bound


def default_iterations(epsilon: float, n: int) -> int:
    return math.ceil(36 * (n + 1) / epsilon ** 2)


def _checked(g, n: int) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (n,) or not np.all(np.isfinite(g)):
        raise ValueError(f"convex.frank_wolfe_min: bad subgradient {g}")
    return g


def solve_frank_wolfe(f: Callable, grad: Callable, M: LinearOptimizer, assess, epsilon: float,
                      n: int, *, max_iter: Optional[int] = None,
                      trace: Optional[Callable] = None) -> FrankWolfeResult:
    """Minimize convex ``f`` over the loss hull with averaged conditional-gradient steps.

    Each step queries ``M`` at the running sum of subgradients and moves the
    iterate toward the returned choice with step ``1/(t+1)``, so the iterate
    is always the uniform average of the chosen losses. The sum of
    linearizations gives a certified lower bound; the loop stops once
    ``f(iterate) - bound <= epsilon / 2`` or after ``ceil(36 (n+1) / eps^2)``
    steps.

    Parameters
    ----------
    trace : callable, optional
        ``trace(step, value, gap)`` after each step.
    """
    if not 0 < epsilon:
        raise ValueError("convex.frank_wolfe_min: epsilon must be positive")
    T = default_iterations(epsilon, n) if max_iter is None else int(max_iter)
    cache = assess if isinstance(assess, CountingCache) else CountingCache(assess)
    tol = M.tolerance + getattr(cache.assess, "tolerance", 0.0)
    calls = 0

    def lmo(w):
        nonlocal calls
        calls += 1
        return M(w)

    c = lmo(_checked(grad(np.full(n, 0.5)), n))
    atoms = [c]
    x = np.array(cache(c), dtype=float)
    G = np.zeros(n)
    lin = 0.0
    best = -math.inf
    fx = float(f(x))
    for t in range(1, T + 1):
        g = _checked(grad(x), n)
        G += g
        lin += fx - g @ x
        s = lmo(G)
        v = cache(s)
        bound = (lin + G @ v - tol * math.sqrt(G @ G)) / t
        best = max(best, bound)
        if trace is not None:
            trace(t, fx, fx - best)
        if fx - best <= epsilon / 2:
            return FrankWolfeResult(Mixture.uniform(atoms), x, fx, best, t, True, calls)
        if t == T:
            break
        atoms.append(s)
        x = x + (v - x) / (t + 1)
        fx = float(f(x))
    return FrankWolfeResult(Mixture.uniform(atoms), x, fx, best, T, False, calls)


def frank_wolfe_min(f, grad, M: LinearOptimizer, assess, epsilon: float, n: int, **kwargs) -> Mixture:
    """Mixture whose loss is within ``epsilon`` of the minimum of convex ``f``."""
    return solve_frank_wolfe(f, grad, M, assess, epsilon, n, **kwargs).mixture


@dataclass
class ConstrainedResult:
    inner: FrankWolfeResult
    lam: float
    tau: float

    @property
    def mixture(self) -> Mixture:
        return self.inner.mixture


def penalty_blend(f, grad_f, g, grad_g, lam: float):
    """``h = lam f + (1 - lam) max(0, g)`` and its subgradient."""

    def h(l):
        return lam * f(l) + (1.0 - lam) * max(0.0, float(g(l)))

    def grad_h(l):
        out = lam * np.asarray(grad_f(l), dtype=float)
        if g(l) >= 0:
            out = out + (1.0 - lam) * np.asarray(grad_g(l), dtype=float)
        return out

    return h, grad_h


def solve_constrained(f, grad_f, g, grad_g, M: LinearOptimizer, assess, epsilon: float, n: int,
                      **kwargs) -> ConstrainedResult:
    """Approximately minimize ``f`` subject to ``g <= 0``.

    Minimizes the blend with ``lam = eps / (2 eps + n)`` to accuracy
    ``lam * eps``; the optimizer tolerance this needs is
    ``eps^2 / (12 eps + 6 n)``. A feasible choice is assumed to exist;
    infeasibility is not detected.
    """
    lam = epsilon / (2 * epsilon + n)
    tau = epsilon ** 2 / (12 * epsilon + 6 * n)
    if M.tolerance > tau:
        raise ContractViolation(
            f"convex.constrained_min: optimizer tolerance {M.tolerance} exceeds {tau}")
    h, grad_h = penalty_blend(f, grad_f, g, grad_g, lam)
    res = solve_frank_wolfe(h, grad_h, M, assess, lam * epsilon, n, **kwargs)
    return ConstrainedResult(res, lam, tau)


def constrained_min(f, grad_f, g, grad_g, M, assess, epsilon, n, **kwargs) -> Mixture:
    return solve_constrained(f, grad_f, g, grad_g, M, assess, epsilon, n, **kwargs).mixture
