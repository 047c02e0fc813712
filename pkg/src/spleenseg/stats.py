"""Wilcoxon signed-rank test for paired segmentation scores.

Self-contained so that the exact small-sample branch is fully specified:
zero differences are discarded, ties get mean ranks, and for n <= 12 the
two-sided p-value comes from enumerating all 2^n sign assignments. For
larger n a normal approximation with tie and continuity corrections is
used. W is the sum of ranks of the positive differences of ``x - y``.
"""

from __future__ import annotations

import math

import numpy as np

EXACT_MAX_N = 12
MIN_PAIRS = 5


class TooFewPairsError(ValueError):
    """Fewer than MIN_PAIRS nonzero differences."""


def _mean_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean of their positions.

    Mean ranks of consecutive integers are multiples of 0.5, so every
    rank (and any sum of ranks) is exact in float64.
    """
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: np.ndarray, w: float) -> float:
    """P-value from the full 2^n null distribution of W+.

    Works on doubled ranks so all arithmetic is integer. Counts sign
    assignments with W+ <= w and W+ >= w, doubles the smaller tail.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total_doubled = int(doubled.sum())
    # distribution over 2*W+: counts[k] = number of subsets with doubled sum k
    counts = np.zeros(total_doubled + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        counts[r:] += counts[: total_doubled + 1 - r].copy()
    w2 = int(np.rint(2.0 * w))
    n_assign = int(counts.sum())
    c_le = int(counts[: w2 + 1].sum())
    c_ge = int(counts[w2:].sum())
    return min(1.0, 2.0 * min(c_le, c_ge) / n_assign)


def _normal_two_sided_p(ranks: np.ndarray, w: float, diffs: np.ndarray) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: subtract sum(t^3 - t)/48 over groups of tied |d|
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    var -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    if var <= 0.0:
        return 1.0
    d = w - mean
    if d > 0:
        d -= 0.5
    elif d < 0:
        d += 0.5
    z = d / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided paired test; returns (W, p).

    W is the sum of ranks of positive differences x - y. Pairs with zero
    difference are discarded first; raises TooFewPairsError when fewer
    than MIN_PAIRS remain.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1 or len(xa) != len(ya):
        raise ValueError("x and y must be 1D sequences of equal length")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise ValueError("scores must be finite")
    diffs = xa - ya
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n < MIN_PAIRS:
        raise TooFewPairsError(
            f"need at least {MIN_PAIRS} nonzero differences, got {n}"
        )
    ranks = _mean_ranks(np.abs(diffs))
    w = float(np.sum(ranks[diffs > 0]))
    if n <= EXACT_MAX_N:
        p = _exact_two_sided_p(ranks, w)
    else:
        p = _normal_two_sided_p(ranks, w, diffs)
    return w, p
