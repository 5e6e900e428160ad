"""Multi-objective primitives: dominance, front extraction, hypervolume,
crowding distances and non-dominated sorting.

All objectives follow the maximization convention. A "front" is an (n, m)
array of mutually non-dominated objective vectors; score vectors and
reference points are plain 1-D float arrays. Every function here is pure.
"""

from __future__ import annotations

import warnings
from typing import Literal, NamedTuple, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DegenerateDomainError",
    "ReferencePointWarning",
    "MonteCarloEstimate",
    "dominates",
    "dominance_matrix",
    "extract_front",
    "hypervolume_2d",
    "hypervolume_mc",
    "crowding_distances",
    "non_dominated_sort",
]


class DimensionError(ValueError):
    """Objective vectors have mismatched or unsupported dimensions."""


class DegenerateDomainError(ValueError):
    """Monte-Carlo sampling box has a non-positive side length."""


class ReferencePointWarning(UserWarning):
    """Some front points fail to weakly dominate the reference point."""


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


def _as_points(points, m: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float array of objective vectors, validating width."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, m if m is not None else 0)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected (n, m) objective array, got shape {arr.shape}")
    if m is not None and arr.shape[1] != m:
        raise DimensionError(f"expected {m} objectives, got {arr.shape[1]}")
    return arr


def dominates(a, b) -> bool:
    """Pareto dominance under maximization.

    True iff ``a`` is at least as high as ``b`` in every objective and
    strictly higher in at least one. Equal vectors never dominate.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"score vectors differ in shape: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def dominance_matrix(points) -> np.ndarray:
    """Boolean matrix D with D[i, j] true iff point i dominates point j."""
    pts = _as_points(points)
    ge = (pts[:, None, :] >= pts[None, :, :]).all(axis=2)
    gt = (pts[:, None, :] > pts[None, :, :]).any(axis=2)
    return ge & gt


def extract_front(points) -> np.ndarray:
    """Indices of points not dominated by any other point.

    Duplicates of a non-dominated vector are all retained. An empty input
    yields an empty index array.
    """
    pts = _as_points(points)
    if pts.shape[0] == 0:
        return np.empty(0, dtype=int)
    dominated = dominance_matrix(pts).any(axis=0)
    return np.flatnonzero(~dominated)


def non_dominated_sort(points) -> list[np.ndarray]:
    """Partition points into successive Pareto fronts F1, F2, ...

    F1 is the front of the whole set, F2 the front of the remainder, and so
    on; every index appears in exactly one front.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n == 0:
        return []
    dom = dominance_matrix(pts)
    counts = dom.sum(axis=0)
    assigned = np.zeros(n, dtype=bool)
    fronts: list[np.ndarray] = []
    while not assigned.all():
        current = ~assigned & (counts == 0)
        idx = np.flatnonzero(current)
        fronts.append(idx)
        assigned[idx] = True
        counts = counts - dom[idx].sum(axis=0)
    return fronts


def hypervolume_2d(front, ref) -> float:
    """Exact bi-objective hypervolume: area of the union of rectangles
    spanned by the reference point and each front point.

    Points that fail to weakly dominate ``ref`` contribute zero area; if any
    such point exists a ``ReferencePointWarning`` is emitted. An empty front
    has hypervolume 0.
    """
    ref = np.asarray(ref, dtype=float)
    if ref.shape != (2,):
        raise DimensionError(f"expected a 2-D reference point, got shape {ref.shape}")
    pts = _as_points(front, m=2)
    if pts.shape[0] == 0:
        return 0.0
    below = (pts < ref).any(axis=1)
    if below.any():
        warnings.warn(
            f"{int(below.sum())} front point(s) fall below the reference point "
            "and contribute no hypervolume",
            ReferencePointWarning,
            stacklevel=2,
        )
    # Sweep right to left; each point adds the strip above the running level.
    order = np.lexsort((-pts[:, 1], -pts[:, 0]))
    hv = 0.0
    level = ref[1]
    for x, y in pts[order]:
        width = x - ref[0]
        if width <= 0.0:
            continue
        if y > level:
            hv += width * (y - level)
            level = y
    return float(hv)


def hypervolume_mc(
    front,
    ref,
    bound,
    samples: int,
    seed: int,
    chunk: int = 200_000,
) -> MonteCarloEstimate:
    """Monte-Carlo hypervolume estimate over the box [ref, bound].

    Works for any objective count; serves as an independent check on
    :func:`hypervolume_2d` and as the fallback for m > 2. Deterministic for
    a fixed seed. Returns the estimate together with its binomial standard
    error.
    """
    ref = np.asarray(ref, dtype=float)
    bound = np.asarray(bound, dtype=float)
    if ref.shape != bound.shape or ref.ndim != 1:
        raise DimensionError(f"ref/bound shape mismatch: {ref.shape} vs {bound.shape}")
    widths = bound - ref
    if np.any(widths <= 0.0):
        raise DegenerateDomainError(f"box [ref, bound] has non-positive widths: {widths}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = _as_points(front, m=ref.shape[0])
    volume = float(np.prod(widths))
    if pts.shape[0] == 0:
        return MonteCarloEstimate(0.0, 0.0)
    if np.any(pts > bound):
        raise ValueError("bound must weakly dominate every front point")

    rng = np.random.default_rng(seed)
    hits = 0
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        draws = ref + rng.random((n, ref.shape[0])) * widths
        covered = (pts[None, :, :] >= draws[:, None, :]).all(axis=2).any(axis=1)
        hits += int(covered.sum())
        remaining -= n
    p = hits / samples
    stderr = volume * float(np.sqrt(p * (1.0 - p) / samples))
    return MonteCarloEstimate(p * volume, stderr)


def crowding_distances(
    front,
    mode: Literal["selection", "replacement"] = "selection",
    normalize: bool = False,
) -> np.ndarray:
    """Per-solution crowding distances on a bi-objective front.

    The front is sorted by the first objective; each interior point gets the
    mean Manhattan distance to its two neighbours, in raw objective units
    unless ``normalize`` divides by the per-objective front range. Boundary
    points take the single-neighbour distance in selection mode and +inf in
    replacement mode. A singleton front is [1.0] in selection mode and
    [+inf] in replacement mode. Distances are returned in input order.
    """
    if mode not in ("selection", "replacement"):
        raise ValueError(f"unknown crowding mode: {mode!r}")
    pts = _as_points(front, m=2)
    n = pts.shape[0]
    if n == 0:
        return np.empty(0, dtype=float)
    if n == 1:
        return np.array([1.0 if mode == "selection" else np.inf])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    ordered = pts[order]
    if normalize:
        span = ordered.max(axis=0) - ordered.min(axis=0)
        span[span == 0.0] = 1.0
        ordered = ordered / span
    gaps = np.abs(np.diff(ordered, axis=0)).sum(axis=1)
    dist = np.empty(n, dtype=float)
    dist[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    if mode == "selection":
        dist[0] = gaps[0]
        dist[-1] = gaps[-1]
    else:
        dist[0] = np.inf
        dist[-1] = np.inf
    out = np.empty(n, dtype=float)
    out[order] = dist
    return out
