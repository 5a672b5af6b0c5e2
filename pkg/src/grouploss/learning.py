"""Learning reductions: weighted classification through label flipping,
regression through classification, and the group-fair wrappers.

Feature points are integer ids; learners resolve them against their own
feature tables. A *data source* exposes

* ``membership(xs) -> (K, n) bool``
* ``exact() -> (xs, ys, probs)`` or ``None``
* ``sample(n, rng) -> (xs, ys)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ContractViolation, LinearOptimizer, LossAssessor, Mixture
from .groupopt import GroupOptRun, compute_schedule, solve_group_opt
from .objectives import GroupStats


class InsufficientData(RuntimeError):
    pass


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# learners


class FiniteFamilyLearner:
    """Exact weighted ERM over an explicit finite family of classifiers.

    Parameters
    ----------
    tables : (J, n_x) array
        Prediction of each classifier on each feature id.
    handles : tuple, optional
        Handle reported for each classifier (default ``0..J-1``).
    """

    def __init__(self, tables, handles=None):
        self.tables = np.atleast_2d(np.asarray(tables, dtype=np.int64))
        self.handles = tuple(range(len(self.tables))) if handles is None else tuple(handles)
        if len(self.handles) != len(self.tables):
            raise ValueError("FiniteFamilyLearner: one handle per classifier")
        self._row = {h: i for i, h in enumerate(self.handles)}

    def errors(self, xs, ys, weights=None) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys)
        w = np.ones(len(xs)) if weights is None else np.asarray(weights, dtype=float)
        n_x = self.tables.shape[1]
        a1 = np.bincount(xs, weights=w * (ys == 1), minlength=n_x)
        a0 = np.bincount(xs, weights=w * (ys == 0), minlength=n_x)
        return self.tables @ a0 + (1 - self.tables) @ a1

    def fit(self, xs, ys, weights=None):
        """Handle of the classifier with least weighted error (first on ties)."""
        return self.handles[int(np.argmin(self.errors(xs, ys, weights)))]

    def predict(self, handle, xs) -> np.ndarray:
        return self.tables[self._row[handle], np.asarray(xs, dtype=np.int64)]

    def default_handle(self):
        return self.handles[0]

    def sample_size(self, epsilon: float, delta: float) -> int:
        """Examples for ERM to be ``epsilon``-optimal with probability ``1 - delta``."""
        return math.ceil(2.0 * math.log(2.0 * len(self.tables) / delta) / epsilon ** 2)


class StumpLearner:
    """Weighted ERM over decision stumps ``1[x_j >= t]`` and ``1[x_j < t]`` (constants included).

    Handles are ``(j, t, polarity)``; ``polarity = 1`` predicts 1 above the threshold.
    """

    def __init__(self, features):
        self.features = np.atleast_2d(np.asarray(features, dtype=float))

    def fit(self, xs, ys, weights=None):
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys)
        w = np.ones(len(xs)) if weights is None else np.asarray(weights, dtype=float)
        n_x, d = self.features.shape
        a1 = np.bincount(xs, weights=w * (ys == 1), minlength=n_x)
        a0 = np.bincount(xs, weights=w * (ys == 0), minlength=n_x)
        best = (a1.sum(), (0, math.inf, 1))  # predicts 0 everywhere
        for j in range(d):
            col = self.features[:, j]
            vals, inv = np.unique(col, return_inverse=True)
            b1 = np.bincount(inv, weights=a1, minlength=len(vals))
            b0 = np.bincount(inv, weights=a0, minlength=len(vals))
            below1 = np.concatenate([[0.0], np.cumsum(b1)])
            below0 = np.concatenate([[0.0], np.cumsum(b0)])
            err_up = below1 + (b0.sum() - below0)  # predict 1 on x_j >= vals[i]
            err_down = below0 + (b1.sum() - below1)
            thresholds = np.concatenate([vals, [math.inf]])
            for err, pol in ((err_up, 1), (err_down, 0)):
                i = int(np.argmin(err))
                if err[i] < best[0] - 1e-15:
                    best = (float(err[i]), (j, float(thresholds[i]), pol))
        return best[1]

    def predict(self, handle, xs) -> np.ndarray:
        j, t, pol = handle
        above = self.features[np.asarray(xs, dtype=np.int64), j] >= t
        return (above if pol == 1 else ~above).astype(np.int64)

    def default_handle(self):
        return (0, math.inf, 1)

    def sample_size(self, epsilon: float, delta: float) -> int:
        n_x, d = self.features.shape
        H = 2 * d * (n_x + 1)
        return math.ceil(2.0 * math.log(2.0 * H / delta) / epsilon ** 2)


class CsvSource:
    """Examples read from CSV: feature columns, then the label, then K group bits.

    The exact distribution is the empirical one (uniform over rows).
    """

    def __init__(self, path, K: int):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] < K + 2:
            raise ValueError(f"learning.CsvSource: {path} needs features, label and {K} group columns")
        self.features = data[:, : -K - 1]
        self.labels = data[:, -K - 1].astype(np.int64)
        self.groups = data[:, -K:].astype(bool).T
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError(f"learning.CsvSource: labels in {path} must be 0/1")
        n = len(self.labels)
        self._xs = np.arange(n)
        self._probs = np.full(n, 1.0 / n)

    def membership(self, xs) -> np.ndarray:
        return self.groups[:, np.asarray(xs, dtype=np.int64)]

    def exact(self):
        return self._xs, self.labels, self._probs

    def sample(self, n: int, rng):
        idx = rng.integers(0, len(self.labels), size=n)
        return idx, self.labels[idx]

    def stats(self) -> GroupStats:
        p = np.stack([(self.groups * (self.labels == i)).mean(axis=1) for i in (0, 1)], axis=1)
        return GroupStats(p)

    def learner(self) -> StumpLearner:
        return StumpLearner(self.features)


# label flipping for classification


def _cell_coefficients(w, stats: GroupStats) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    K = stats.K
    if w.shape != (2 * K,):
        raise ValueError(f"learning: weight vector must have length {2 * K}")
    return np.stack([w[:K] / stats.p0, w[K:] / stats.p1], axis=1)  # (K, 2)


def signed_weights(membership, ys, w, stats: GroupStats):
    """Vectorized :func:`signed_weight` for ``membership`` of shape ``(K, n)``."""
    coef = _cell_coefficients(w, stats)
    W = float(np.abs(coef).sum())
    if W <= 0:
        raise ValueError("learning.signed_weight: weight vector is zero")
    ys = np.asarray(ys, dtype=np.int64)
    s = (np.asarray(membership, dtype=float) * coef[:, ys]).sum(axis=0) / W
    return s, W


def signed_weight(membership, y: int, w, stats: GroupStats):
    """Signed weight ``s`` in ``[-1, 1]`` and normalizer ``W`` of an example.

    ``membership`` is the example's length-K group indicator. Then
    ``w . loss(c) = E[W s |c(x) - y|]``.
    """
    s, W = signed_weights(np.asarray(membership).reshape(-1, 1), [y], w, stats)
    return float(s[0]), W


def flip_labels(ys, s, seed):
    """Keep each label with probability ``(1 + s) / 2``, otherwise flip it."""
    ys = np.asarray(ys, dtype=np.int64)
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) > 1 + 1e-12):
        raise ValueError("learning.flip_labels: signed weights must lie in [-1, 1]")
    keep = _rng(seed).random(len(ys)) < (1.0 + s) / 2.0
    return np.where(keep, ys, 1 - ys)


def flipped_distribution(xs, ys, probs, s):
    """Exact flipped distribution as a weighted sample over ``(x, y')``."""
    xs = np.asarray(xs)
    ys = np.asarray(ys, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    s = np.asarray(s, dtype=float)
    return (np.concatenate([xs, xs]), np.concatenate([ys, 1 - ys]),
            np.concatenate([probs * (1 + s) / 2, probs * (1 - s) / 2]))


def learner_accuracy(tau: float, stats: GroupStats) -> float:
    """Learner accuracy ``tau p_min / sqrt(dim)`` that makes the optimizer tau-accurate."""
    return tau * stats.p_min / math.sqrt(2 * stats.K)


def classification_linear_optimizer(w, stats: GroupStats, learner, source, tau: float,
                                    delta_per_call: float, seed, exact: bool = False):
    """Classifier approximately minimizing ``w . [FPR, FNR]``.

    With ``exact`` the flipped distribution is built in closed form from
    ``source.exact()``; otherwise enough examples are drawn for the learner
    to reach accuracy ``tau p_min / sqrt(2K)``.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        return learner.default_handle()
    if exact:
        xs, ys, probs = source.exact()
        s, _ = signed_weights(source.membership(xs), ys, w, stats)
        return learner.fit(*flipped_distribution(xs, ys, probs, s))
    rng = _rng(seed)
    n = learner.sample_size(learner_accuracy(tau, stats), delta_per_call)
    xs, ys = source.sample(n, rng)
    s, _ = signed_weights(source.membership(xs), ys, w, stats)
    return learner.fit(xs, flip_labels(ys, s, rng))


def estimate_rates(handle, xs, ys, membership, learner, weights=None) -> np.ndarray:
    """Per-cell false positive and false negative rates, ``[FPR_1..K, FNR_1..K]``."""
    ys = np.asarray(ys, dtype=np.int64)
    memb = np.asarray(membership, dtype=bool)
    w = np.ones(len(ys)) if weights is None else np.asarray(weights, dtype=float)
    wrong = (learner.predict(handle, xs) != ys).astype(float) * w
    out = np.empty(2 * memb.shape[0])
    for i in (0, 1):
        cell = memb & (ys == i)
        tot = cell @ w
        if np.any(tot <= 0):
            k = int(np.argmax(tot <= 0))
            raise InsufficientData(f"learning.estimate_rates: cell (group {k}, y={i}) is empty")
        out[i * memb.shape[0]:(i + 1) * memb.shape[0]] = (cell @ wrong) / tot
    return out


def rate_sample_size(tau: float, delta: float, p_min: float, dim: int) -> int:
    """Examples so every cell rate is within ``tau / sqrt(dim)`` with probability ``1 - delta``.

    Hoeffding per cell, plus a multiplicative Chernoff bound that each cell
    receives at least half its expected count.
    """
    per_cell = dim * math.log(4 * dim / delta) / (2 * tau ** 2)
    return math.ceil(max(2 * per_cell / p_min, 8 * math.log(2 * dim / delta) / p_min))


def classification_oracles(source, learner, stats: GroupStats, tau: float, delta_per_call: float,
                           seed, exact: bool = False):
    """Linear optimizer and rate assessor over classifiers, both at tolerance ``tau``."""
    rng = _rng(seed)

    def optimize(w):
        return classification_linear_optimizer(w, stats, learner, source, tau, delta_per_call,
                                               rng, exact)

    if exact:
        xs, ys, probs = source.exact()
        memb = source.membership(xs)

        def assess(c):
            return estimate_rates(c, xs, ys, memb, learner, probs)
    else:
        n = rate_sample_size(tau, delta_per_call, stats.p_min, 2 * stats.K)

        def assess(c):
            xs, ys = source.sample(n, rng)
            return estimate_rates(c, xs, ys, source.membership(xs), learner)

    return LinearOptimizer(optimize, tau, "general"), LossAssessor(assess, tau)


def oracle_budget(epsilon: float, K: int) -> int:
    """Upper bound on optimizer plus assessor calls in a grid search."""
    s = compute_schedule(epsilon, K)
    return s.grid_size * (2 * s.T + 1)


def group_fair_classify(f, L: float, epsilon: float, delta: float, learner, source,
                        stats: GroupStats, seed=0, *, exact: bool = False,
                        reachable=None, trace=None) -> GroupOptRun:
    """Classifier mixture nearly minimizing ``f(FPR, FNR)``.

    ``f`` is ``L``-Lipschitz on ``[0, 1]^{2K}``; the search runs on ``f / L``
    at accuracy ``epsilon / L``, each oracle call failing with probability at
    most ``delta / Q``.
    """
    K2 = 2 * stats.K
    eps = min(1.0, epsilon / L)
    sched = compute_schedule(eps, K2)
    Q = oracle_budget(eps, K2)
    M, assess = classification_oracles(source, learner, stats, sched.tau, delta / Q, seed, exact)
    scaled = _ScaledObjective(f, 1.0 / L, 1.0)
    return solve_group_opt(eps, scaled, assess, M, K2, reachable=reachable, trace=trace)


class _ScaledObjective:
    """``l -> c * f(u * l)``, keeping the vectorized flag."""

    def __init__(self, f, c: float, u: float):
        self.f, self.c, self.u = f, c, u
        self.vectorized = bool(getattr(f, "vectorized", False))

    def __call__(self, l):
        return self.c * np.asarray(self.f(self.u * np.asarray(l, dtype=float)))


# regression through classification


@dataclass(frozen=True)
class LinearCombinationPredictor:
    """``h(x) = sum_i alpha_i c_i(x)`` with ``sum_i |alpha_i| <= B``."""

    atoms: tuple
    B: float
    learner: object = field(compare=False, hash=False, repr=False, default=None)

    def __post_init__(self):
        if sum(abs(a) for a, _ in self.atoms) > self.B * (1 + 1e-9):
            raise ValueError("LinearCombinationPredictor: coefficients exceed the bound")

    def predict(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        out = np.zeros(len(xs))
        for a, c in self.atoms:
            out += a * self.learner.predict(c, xs)
        return out

    __call__ = predict


@dataclass(frozen=True)
class ExactRegressionDistribution:
    """Finite distribution over weighted examples ``(w, x, y)``.

    ``groups`` is a ``(K, D)`` membership mask over entries.
    """

    xs: np.ndarray
    ys: np.ndarray
    probs: np.ndarray
    ws: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.int64)
        ys = np.asarray(self.ys, dtype=float)
        pr = np.asarray(self.probs, dtype=float)
        ws = np.ones(len(xs)) if self.ws is None else np.asarray(self.ws, dtype=float)
        if not (len(xs) == len(ys) == len(pr) == len(ws)):
            raise ValueError("ExactRegressionDistribution: arrays disagree in length")
        if np.any(np.abs(ys) > 1) or np.any((ws < 0) | (ws > 1)):
            raise ValueError("ExactRegressionDistribution: need y in [-1, 1] and w in [0, 1]")
        if np.any(pr < 0) or abs(pr.sum() - 1) > 1e-12:
            raise ValueError("ExactRegressionDistribution: probabilities must sum to 1")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "probs", pr)
        object.__setattr__(self, "ws", ws)
        if self.groups is not None:
            object.__setattr__(self, "groups", np.atleast_2d(np.asarray(self.groups, dtype=bool)))

    def reweighted(self, ws) -> "ExactRegressionDistribution":
        return ExactRegressionDistribution(self.xs, self.ys, self.probs, ws, self.groups)

    def group_probs(self) -> np.ndarray:
        return self.groups @ self.probs

    def weighted_error(self, h: np.ndarray) -> float:
        """``E[w (y - h(x))^2]`` for predictions ``h`` over entries."""
        return float(self.probs @ (self.ws * (self.ys - h) ** 2))


@dataclass
class RegressionSample:
    """A finite list of weighted examples, consumed front to back."""

    xs: np.ndarray
    ys: np.ndarray
    ws: Optional[np.ndarray] = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.int64)
        self.ys = np.asarray(self.ys, dtype=float)
        self.ws = np.ones(len(self.xs)) if self.ws is None else np.asarray(self.ws, dtype=float)

    def __len__(self) -> int:
        return len(self.xs)


def regression_iterations(epsilon: float, B: float) -> int:
    r = 12 * B ** 2 / epsilon
    return max(1, math.ceil(r * math.log(r)))


def flip_probability(w, y, h, B: float):
    """``P[y' = 1] = 1/2 + w (y - h) / (2 (B + 1))``."""
    p = 0.5 + np.asarray(w) * (np.asarray(y) - np.asarray(h)) / (2.0 * (B + 1.0))
    if p.min() < -1e-12 or p.max() > 1 + 1e-12:
        raise ContractViolation("learning.classy_regression: flip probability outside [0, 1]")
    return np.clip(p, 0.0, 1.0)


@dataclass
class ClassyRegressionResult:
    predictor: LinearCombinationPredictor
    steps: list  # (alpha_t, c_t) for t = 1..T
    T: int


def _merge(steps, T: int, B: float, learner) -> LinearCombinationPredictor:
    coef: dict = {}
    for a, c in steps:
        coef[c] = coef.get(c, 0.0) + a / T
    atoms = tuple((a, c) for c, a in coef.items() if a != 0.0)
    return LinearCombinationPredictor(atoms, B, learner)


def solve_classy_regression(learner, data, epsilon: float, B: float, seed=0,
                            T: Optional[int] = None) -> ClassyRegressionResult:
    """Boost ``+-B``-scaled classifiers into a low weighted-squared-error predictor.

    ``data`` is an :class:`ExactRegressionDistribution` (expectations in
    closed form) or a :class:`RegressionSample` (consumed in batches of
    ``n = |Z| / (2T)``).
    """
    if not 0 < epsilon < 1 or B <= 0:
        raise ValueError("learning.classy_regression: need epsilon in (0, 1) and B > 0")
    T = regression_iterations(epsilon, B) if T is None else int(T)
    rng = _rng(seed)
    exact = isinstance(data, ExactRegressionDistribution)
    if exact:
        xs, ys, ws, pr = data.xs, data.ys, data.ws, data.probs
        c = learner.fit(xs, (ys > 0).astype(np.int64), pr)
    else:
        n = len(data) // (2 * T)
        if n < 1:
            raise InsufficientData(
                f"learning.classy_regression: {len(data)} examples cannot fill {T} batches")
        c = learner.fit(data.xs[:n], (data.ys[:n] > 0).astype(np.int64))
        pos = n
    steps = [(B, c)]
    coef = {c: B}
    xs2 = ys2 = None
    if exact:
        xs2 = np.concatenate([xs, xs])
        ys2 = np.concatenate([np.ones(len(xs), np.int64), np.zeros(len(xs), np.int64)])
        preds = {c: learner.predict(c, xs)}
        fast = isinstance(learner, FiniteFamilyLearner)
        if fast:
            n_x = learner.tables.shape[1]
            pr_x = np.bincount(xs, weights=pr, minlength=n_x)
        h_sum = B * preds[c].astype(float)
    for t in range(1, T):
        if exact:
            h = h_sum / t
            p1 = flip_probability(ws, ys, h, B)
            if fast:
                # flipping every label turns error e into total mass minus e
                a1 = np.bincount(xs, weights=pr * p1, minlength=n_x)
                errs = learner.tables @ (pr_x - a1) + (1 - learner.tables) @ a1
                ca = learner.handles[int(np.argmin(errs))]
                cb = learner.handles[int(np.argmax(errs))]
            else:
                ca = learner.fit(xs2, ys2, np.concatenate([pr * p1, pr * (1 - p1)]))
                cb = learner.fit(xs2, ys2, np.concatenate([pr * (1 - p1), pr * p1]))
            resid = pr * ws * (ys - h)
            for cand in (ca, cb):
                if cand not in preds:
                    preds[cand] = learner.predict(cand, xs)
            score_a = B * (preds[ca] @ resid)
            score_b = -B * (preds[cb] @ resid)
        else:
            if pos + 2 * n > len(data):
                raise InsufficientData("learning.classy_regression: ran out of examples")
            bx, by, bw = (data.xs[pos:pos + 2 * n], data.ys[pos:pos + 2 * n],
                          data.ws[pos:pos + 2 * n])
            pos += 2 * n
            h = sum(a * learner.predict(cc, bx) for cc, a in coef.items()) / t
            p1 = flip_probability(bw[:n], by[:n], h[:n], B)
            yflip = (rng.random(n) < p1).astype(np.int64)
            ca = learner.fit(bx[:n], yflip)
            cb = learner.fit(bx[:n], 1 - yflip)
            resid = bw[n:] * (by[n:] - h[n:])
            score_a = B * (learner.predict(ca, bx[n:]) @ resid)
            score_b = -B * (learner.predict(cb, bx[n:]) @ resid)
        a, c = (B, ca) if score_a >= score_b else (-B, cb)
        steps.append((a, c))
        coef[c] = coef.get(c, 0.0) + a
        if exact:
            h_sum = h_sum + a * preds[c]
    return ClassyRegressionResult(_merge(steps, T, B, learner), steps, T)


def classy_regression(learner, data, epsilon: float, B: float, seed=0, **kwargs):
    """Predictor in the ``B``-bounded span of classifiers with near-minimal weighted squared error."""
    return solve_classy_regression(learner, data, epsilon, B, seed, **kwargs).predictor


def group_squared_errors(h: LinearCombinationPredictor, data: ExactRegressionDistribution) -> np.ndarray:
    """``E[(h(x) - y)^2 | group k]`` for each group."""
    err = (data.ys - h.predict(data.xs)) ** 2
    g = data.groups * data.probs
    return (g @ err) / g.sum(axis=1)


def support_screen(learner: FiniteFamilyLearner, data: ExactRegressionDistribution, B: float,
                   scale: float, n_directions: int = 33):
    """Certified lower bounds on the distance to the upward closure of the achievable losses.

    For unit ``u >= 0`` the minimum of ``u . l`` over achievable scaled
    losses is a weighted regression problem solved exactly; every such
    value gives a separating halfspace.
    """
    from .oracle import regression_oracle

    K = data.groups.shape[0]
    if K == 1:
        dirs = np.ones((1, 1))
    elif K == 2:
        ang = np.linspace(0, np.pi / 2, n_directions)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        rng = np.random.default_rng(0)
        dirs = np.abs(rng.normal(size=(n_directions * K, K)))
        dirs = np.vstack([np.eye(K), np.full((1, K), 1 / math.sqrt(K)), dirs])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pk = data.group_probs()
    preds = learner.tables[:, data.xs]
    support = np.empty(len(dirs))
    for i, u in enumerate(dirs):
        mass = data.probs * ((u / pk) @ data.groups)
        val, _, gap = regression_oracle(preds, data.ys, mass, B)
        support[i] = (val - gap) / scale

    def screen(points):
        return np.maximum((support[None, :] - points @ dirs.T).max(axis=1), 0.0)

    return screen


def group_fair_regress(f, L: float, epsilon: float, delta: float, B: float, learner, data,
                       seed=0, *, inner_epsilon: Optional[float] = None,
                       screen: bool = True, trace=None) -> GroupOptRun:
    """Mixture of bounded classifier combinations nearly minimizing ``f`` of group squared errors.

    ``f`` must be nondecreasing and ``L``-Lipschitz on ``[0, (B+1)^2]^K``.
    Losses are divided by ``U = (B+1)^2`` and the search runs on
    ``l -> f(U l) / (L U)`` at accuracy ``epsilon / (L U)``. The linear
    optimizer is :func:`classy_regression` on examples reweighted by
    ``s(z) = sum_{k: z in Z_k} (w_k / p_k) / W``; by default its accuracy is
    ``U tau p_min / sqrt(K)``, and ``inner_epsilon`` overrides it.

    Only exact distributions are supported here.
    """
    if not isinstance(data, ExactRegressionDistribution) or data.groups is None:
        raise ValueError("learning.group_fair_regress: needs an exact distribution with groups")
    K = data.groups.shape[0]
    U = (B + 1.0) ** 2
    eps = min(1.0, epsilon / (L * U))
    sched = compute_schedule(eps, K)
    pk = data.group_probs()
    if np.any(pk <= 0):
        raise ValueError("learning.group_fair_regress: every group needs positive probability")
    inner = inner_epsilon if inner_epsilon is not None else min(
        0.999, U * sched.tau * pk.min() / math.sqrt(K))
    rng = _rng(seed)
    memo: dict = {}
    zero = LinearCombinationPredictor(((B, learner.default_handle()),), B, learner)

    def optimize(w):
        w = np.asarray(w, dtype=float)
        if not np.any(w):
            return zero
        s = ((w / pk) @ data.groups) / float((w / pk).sum())
        key = s.tobytes()
        if key not in memo:
            memo[key] = classy_regression(learner, data.reweighted(s), inner, B, rng)
        return memo[key]

    def assess(h):
        return group_squared_errors(h, data) / U

    M = LinearOptimizer(optimize, sched.tau, "nonnegative")
    scr = support_screen(learner, data, B, U) if screen and hasattr(learner, "tables") else None
    scaled = _ScaledObjective(f, 1.0 / (L * U), U)
    return solve_group_opt(eps, scaled, LossAssessor(assess, sched.tau), M, K,
                           screen=scr, trace=trace)
