"""Shared types: loss vectors, mixtures, and the two oracle contracts.

Loss vectors are plain 1-d numpy arrays. A choice handle is any hashable value
that the owning back-end knows how to resolve (a row index, a tuple of
facility locations, a predictor object, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

ChoiceHandle = Hashable

WEIGHT_SUM_TOL = 1e-12


class ContractViolation(RuntimeError):
    """An oracle was called outside its contract, or broke it."""


def as_loss_vector(values, bound: float = 1.0, *, slack: float = 1e-9) -> np.ndarray:
    """Validate ``values`` as a point of ``[0, bound]^K`` and return a float array."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"loss vector must be 1-d and non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("loss vector has non-finite coordinates")
    if arr.min() < -slack or arr.max() > bound + slack:
        raise ValueError(f"loss vector {arr} outside [0, {bound}]")
    return arr


@dataclass(frozen=True)
class Mixture:
    """A finite convex combination of choices.

    Weights are normalized on construction; zero-weight atoms are dropped and
    repeated handles are merged (first occurrence keeps its position).
    """

    atoms: tuple[tuple[float, ChoiceHandle], ...]

    def __post_init__(self):
        merged: dict = {}
        for weight, choice in self.atoms:
            weight = float(weight)
            if not np.isfinite(weight) or weight < 0:
                raise ValueError(f"mixture weight must be finite and nonnegative, got {weight}")
            merged[choice] = merged.get(choice, 0.0) + weight
        total = sum(merged.values())
        if not merged or total <= 0:
            raise ValueError("mixture needs at least one atom with positive weight")
        atoms = tuple((w / total, c) for c, w in merged.items() if w > 0)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def uniform(cls, choices: Iterable[ChoiceHandle]) -> "Mixture":
        """Uniform distribution over a list of choices (duplicates add up)."""
        counts: dict = {}
        n = 0
        for c in choices:
            counts[c] = counts.get(c, 0) + 1
            n += 1
        if n == 0:
            raise ValueError("cannot build a uniform mixture of nothing")
        return cls(tuple((k / n, c) for c, k in counts.items()))

    @classmethod
    def point(cls, choice: ChoiceHandle) -> "Mixture":
        return cls(((1.0, choice),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.atoms])

    @property
    def choices(self) -> list:
        return [c for _, c in self.atoms]

    def __len__(self) -> int:
        return len(self.atoms)

    def blend(self, other: "Mixture", alpha: float) -> "Mixture":
        """``alpha * self + (1 - alpha) * other``."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        atoms = [(alpha * w, c) for w, c in self.atoms]
        atoms += [((1.0 - alpha) * w, c) for w, c in other.atoms]
        return Mixture(tuple(atoms))


@dataclass(frozen=True)
class LinearOptimizer:
    """Approximate minimizer of ``w . loss(c)``.

    ``fn(w)`` must return a choice ``c`` with
    ``w . loss(c) <= min_{comparison} w . loss + tolerance * ||w||``.
    In ``"nonnegative"`` mode any weight vector with a negative coordinate is
    rejected before ``fn`` sees it.
    """

    fn: Callable[[np.ndarray], ChoiceHandle]
    tolerance: float = 0.0
    mode: str = "general"

    def __post_init__(self):
        if self.mode not in ("general", "nonnegative"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")

    def __call__(self, w) -> ChoiceHandle:
        w = np.asarray(w, dtype=float)
        if self.mode == "nonnegative" and (w < 0).any():
            raise ContractViolation(
                f"core.LinearOptimizer: nonnegative optimizer got weight {w}"
            )
        return self.fn(w)


@dataclass(frozen=True)
class LossAssessor:
    """Approximate loss function: ``||fn(c) - loss(c)|| <= tolerance``."""

    fn: Callable[[ChoiceHandle], np.ndarray]
    tolerance: float = 0.0
    bound: float = 1.0

    def __call__(self, c: ChoiceHandle) -> np.ndarray:
        return np.asarray(self.fn(c), dtype=float)


@dataclass
class CountingCache:
    """Memoizes an assessor by handle and counts distinct evaluations."""

    assess: LossAssessor
    values: dict = field(default_factory=dict)

    def __call__(self, c: ChoiceHandle) -> np.ndarray:
        try:
            return self.values[c]
        except KeyError:
            v = self.assess(c)
            if not np.all(np.isfinite(v)):
                raise ContractViolation(f"core.LossAssessor: non-finite loss {v} for {c!r}")
            v.setflags(write=False)
            self.values[c] = v
            return v

    @property
    def calls(self) -> int:
        return len(self.values)


def mixture_loss(m: Mixture, assess: Callable[[ChoiceHandle], np.ndarray]) -> np.ndarray:
    """Weighted average of the atoms' loss vectors."""
    if len(m) == 0:
        raise ValueError("empty mixture")
    total = None
    for w, c in m.atoms:
        v = w * np.asarray(assess(c), dtype=float)
        total = v if total is None else total + v
    return total


def _null_vector(a: np.ndarray) -> np.ndarray:
    # a has more columns than rows, so a nonzero null vector exists
    _, _, vt = np.linalg.svd(a)
    return vt[-1]


def caratheodory_reduce(m: Mixture, losses: Sequence) -> Mixture:
    """Rewrite ``m`` as a mixture of at most ``K + 1`` of its atoms, same loss.

    Atoms are fed one at a time into a working set; whenever the set holds
    ``K + 2`` points they are affinely dependent, and shifting weight along
    the dependency until one weight hits zero removes an atom without moving
    the weighted mean.
    """
    losses = [np.asarray(v, dtype=float) for v in losses]
    if len(losses) != len(m):
        raise ValueError(f"got {len(losses)} loss vectors for {len(m)} atoms")
    dims = {v.shape for v in losses}
    if len(dims) != 1 or next(iter(dims)) == () or len(next(iter(dims))) != 1:
        raise ValueError("loss vectors must be 1-d with a common length")
    k = losses[0].size
    if len(m) <= k + 1:
        return m

    weights: list[float] = []
    points: list[np.ndarray] = []
    handles: list = []
    for (w, c), v in zip(m.atoms, losses):
        weights.append(w)
        points.append(v)
        handles.append(c)
        if len(points) <= k + 1:
            continue
        a = np.vstack([np.array(points).T, np.ones(len(points))])
        v_null = _null_vector(a)
        if v_null.max() <= 0:
            v_null = -v_null
        wts = np.array(weights)
        pos = v_null > 0
        ratios = np.full(len(wts), np.inf)
        ratios[pos] = wts[pos] / v_null[pos]
        drop = int(np.argmin(ratios))
        wts = wts - ratios[drop] * v_null
        wts[drop] = 0.0
        wts = np.clip(wts, 0.0, None)
        keep = [i for i in range(len(wts)) if i != drop]
        weights = [float(wts[i]) for i in keep]
        points = [points[i] for i in keep]
        handles = [handles[i] for i in keep]
    return Mixture(tuple(zip(weights, handles)))
