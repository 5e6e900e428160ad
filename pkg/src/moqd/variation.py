"""Genetic variation and the GA / policy-gradient batch split.

The single GA operator used everywhere is Iso+LineDD: isotropic Gaussian
noise plus Gaussian-scaled noise along the line between two parents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from moqd.pareto import DimensionError

__all__ = ["VariationConfig", "iso_line_dd", "split_batch"]


@dataclass(frozen=True)
class VariationConfig:
    """Iso+LineDD scales plus optional genotype clipping bounds.

    Clipping defaults to off: neural-network parameters are unbounded.
    """

    sigma_iso: float = 0.005
    sigma_line: float = 0.05
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.sigma_iso < 0 or self.sigma_line < 0:
            raise ValueError("variation scales must be non-negative")
        if self.bounds is not None and self.bounds[0] >= self.bounds[1]:
            raise ValueError("genotype bounds must satisfy low < high")


def iso_line_dd(x, y, cfg: VariationConfig, rng) -> np.ndarray:
    """Child of two parents: x + sigma_iso * eps + sigma_line * xi * (y - x).

    ``eps`` is a vector of independent standard normals, ``xi`` a single
    standard normal. Deterministic for a fixed rng state.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError(f"parent shapes differ: {x.shape} vs {y.shape}")
    child = x + cfg.sigma_iso * rng.standard_normal(x.shape)
    child = child + cfg.sigma_line * rng.standard_normal() * (y - x)
    if cfg.bounds is not None:
        child = np.clip(child, cfg.bounds[0], cfg.bounds[1])
    return child


def split_batch(batch_size: int, num_objectives: int) -> tuple[int, list[int]]:
    """Divide a batch between GA variation and per-objective PG variation.

    GA takes the ceiling half; the rest is split evenly across objectives
    with any remainder returned to the GA share, so the counts always sum
    to ``batch_size``.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if num_objectives < 1:
        raise ValueError("num_objectives must be >= 1")
    ga = (batch_size + 1) // 2
    per_objective = (batch_size - ga) // num_objectives
    ga += batch_size - ga - per_objective * num_objectives
    if per_objective == 0:
        warnings.warn(
            f"batch_size={batch_size} leaves no policy-gradient slots for "
            f"{num_objectives} objective(s); all variation falls to the GA",
            stacklevel=2,
        )
    return ga, [per_objective] * num_objectives
