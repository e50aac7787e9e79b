"""Distribution distances and the evaluation statistics.

Wasserstein-1 between empirical samples, Wilcoxon signed-rank (exact up to
25 pairs), Pearson correlation with its t-test p-value, and area under the
precision-recall curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats as _sps

from .errors import DegenerateVariance, NoNegatives, NoPositives

WILCOXON_MIN_N = 6
WILCOXON_EXACT_MAX_N = 25


@dataclass(frozen=True)
class ErrorSample:
    value: float
    source: str


@dataclass(frozen=True, eq=False)
class Density:
    bin_edges: np.ndarray
    probabilities: np.ndarray


@dataclass(frozen=True, eq=False)
class PairedSeries:
    x: np.ndarray
    y: np.ndarray
    keys: list = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("paired series need equal-length 1-d inputs")

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def from_maps(cls, a: dict, b: dict) -> PairedSeries:
        """Pair two cell -> value mappings on their common keys, in sorted key order."""
        keys = sorted(set(a) & set(b))
        return cls([a[k] for k in keys], [b[k] for k in keys], keys)


def make_density(samples, n_bins: int = 25, value_range: tuple[float, float] = (0.0, 1.0)) -> Density:
    """Histogram density on fixed edges; samples outside the range land in the end bins."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("density of an empty sample")
    lo, hi = value_range
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(np.clip(s, lo, hi), bins=edges)
    return Density(edges, counts / s.size)


def wasserstein_1d(a, b) -> float:
    """Exact area between the two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein distance needs non-empty samples")
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[w] = number of sign patterns whose positive doubled-rank sum is w."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.astype(np.int64):
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(paired) -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test on ``x - y``.

    Zero differences are dropped; fewer than six remaining pairs give p = 1.
    Ties share mid-ranks. Exact null distribution up to 25 pairs, normal
    approximation with continuity and tie correction above.
    """
    if not isinstance(paired, PairedSeries):
        paired = PairedSeries(*paired)
    d = paired.x - paired.y
    d = d[d != 0]
    n = d.size
    if n < WILCOXON_MIN_N:
        return 1.0
    ranks = _sps.rankdata(np.abs(d))
    doubled = np.rint(2 * ranks).astype(np.int64)
    w_plus = int(doubled[d > 0].sum())
    if n <= WILCOXON_EXACT_MAX_N:
        counts = _signed_rank_counts(doubled)
        lower = int(counts[: w_plus + 1].sum())
        upper = int(counts[w_plus:].sum())
        return min(1.0, 2 * min(lower, upper) / 2**n)
    mean = n * (n + 1) / 4
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_sizes**3 - tie_sizes) / 48
    z = (abs(w_plus / 2 - mean) - 0.5) / math.sqrt(var)
    return float(min(1.0, 2 * _sps.norm.sf(max(z, 0.0))))


def pearson(paired) -> tuple[float, float]:
    """Product-moment correlation and its two-sided p-value (t with n-2 dof)."""
    if not isinstance(paired, PairedSeries):
        paired = PairedSeries(*paired)
    n = len(paired)
    if n < 3:
        raise ValueError("pearson correlation needs at least 3 pairs")
    dx = paired.x - paired.x.mean()
    dy = paired.y - paired.y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance("one side of the paired series is constant")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2 * _sps.t.sf(abs(t), n - 2))


def precision_recall_points(scores, labels):
    """(recall, precision) at every distinct score threshold, highest first; ties share a threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must align")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("no positive labels")
    if n_pos == y.size:
        raise NoNegatives("no negative labels")
    tp, predicted = _threshold_counts(s, y)
    return tp / n_pos, tp / predicted


def _threshold_counts(s, y):
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True]
    return np.cumsum(y)[last], (np.arange(s.size) + 1)[last]


def auc_prc(scores, labels) -> float:
    """Step-wise area under the precision-recall curve: sum of precision times recall increment.

    Summed in exact rationals over the integer counts and rounded once.
    """
    precision_recall_points(scores, labels)  # validates
    tp, predicted = _threshold_counts(np.asarray(scores, dtype=float), np.asarray(labels, dtype=bool))
    area = Fraction(0)
    prev = 0
    for t, k in zip(tp.tolist(), predicted.tolist()):
        area += Fraction((t - prev) * t, k)
        prev = t
    return float(area / int(tp[-1]))
