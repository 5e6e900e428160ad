"""Paired statistical comparison: Wilcoxon signed-rank test with a
Holm-Bonferroni correction for families of comparisons."""

from __future__ import annotations

import math
from itertools import product

import numpy as np

__all__ = ["wilcoxon_signed_rank", "holm_bonferroni"]

EXACT_LIMIT = 12


def _rank_abs(values: np.ndarray) -> np.ndarray:
    """Ranks of |values| with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b) -> float:
    """Two-sided paired Wilcoxon signed-rank p-value.

    Zero differences are dropped. Up to 12 effective pairs the p-value is
    computed by exact enumeration of all sign assignments (conditioning on
    the observed tied ranks); beyond that a normal approximation with tie
    correction and continuity correction is used. All differences zero
    degenerates to p = 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("samples must be paired 1-D sequences of equal length")
    if len(a) < 5:
        raise ValueError("need at least 5 pairs")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return 1.0
    ranks = _rank_abs(np.abs(diffs))
    w_plus = ranks[diffs > 0].sum()
    total = n * (n + 1) / 2.0
    w_small = min(w_plus, total - w_plus)

    if n <= EXACT_LIMIT:
        hits = 0
        for signs in product((0.0, 1.0), repeat=n):
            w = float(np.dot(signs, ranks))
            if min(w, total - w) <= w_small + 1e-12:
                hits += 1
        return hits / 2.0**n

    tie_sizes = np.unique(np.abs(diffs), return_counts=True)[1]
    mean = total / 2.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_sizes**3 - tie_sizes).sum() / 48.0
    if var <= 0:
        return 1.0
    z = (w_small - mean + 0.5) / math.sqrt(var)
    return min(1.0, 2.0 * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))


def holm_bonferroni(p_values) -> list[float]:
    """Step-down Holm adjustment; returns adjusted p in the input order."""
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("need a non-empty 1-D sequence of p-values")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[idx]))
        adjusted[idx] = running
    return adjusted.tolist()
