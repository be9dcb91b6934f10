"""
Paired significance testing and representative-fold selection.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Union

import numpy as np
from scipy import stats as sps

from oarseg.utils.errors import DimensionError, ValidationError

SIGNIFICANCE = 0.05
MIN_PAIRS = 5
MAX_EXACT = 25
MODES = ("exact", "approx", "auto")


@dataclass
class WilcoxonResult:
    """Outcome of a two-sided Wilcoxon signed-rank test."""
    statistic: float
    p_value: float
    n: int
    mode: str
    w_plus: float = 0.0
    w_minus: float = 0.0
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["significant"] = self.significant
        return payload


def signed_ranks(d: np.ndarray) -> np.ndarray:
    """Mid-ranks of |d| (ties share the average rank)."""
    return sps.rankdata(np.abs(d), method="average")


def exact_null_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """counts[s]: number of sign vectors whose positive doubled-rank sum is s.

    Equivalent to enumerating all 2^n sign assignments.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def exact_p_value(ranks: np.ndarray, statistic: float) -> float:
    """Two-sided P(min(W+, W-) <= statistic) under the sign-flip null."""
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    counts = exact_null_counts(doubled)
    threshold = int(round(2.0 * statistic))
    tail = counts[:threshold + 1].sum() / float(2 ** len(ranks))
    return float(min(1.0, 2.0 * tail))


def approx_p_value(ranks: np.ndarray, statistic: float) -> float:
    """Normal approximation with tie-corrected variance and continuity correction."""
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    z = (abs(statistic - mean) - 0.5) / np.sqrt(var)
    return float(min(1.0, 2.0 * sps.norm.sf(max(z, 0.0))))


def wilcoxon_signed_rank(
    x: Sequence[float],
    y: Sequence[float],
    mode: str = "auto",
) -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test of x against y.

    Zero differences are dropped. ``auto`` is exact up to 25 pairs and the
    normal approximation beyond.

    Raises:
        DimensionError: If x and y differ in length
        ValidationError: On an unknown mode, fewer than 5 non-zero differences,
            or an exact request beyond 25 pairs
    """
    if mode not in MODES:
        raise ValidationError(f"Unknown Wilcoxon mode: {mode}", "VAL_003")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError("wilcoxon_signed_rank", x.shape, y.shape)
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=0, mode=mode, degenerate=True)
    if n < MIN_PAIRS:
        raise ValidationError(f"Wilcoxon test needs >= {MIN_PAIRS} non-zero differences, got {n}", "VAL_001")
    if mode == "auto":
        mode = "exact" if n <= MAX_EXACT else "approx"
    if mode == "exact" and n > MAX_EXACT:
        raise ValidationError(f"Exact Wilcoxon limited to {MAX_EXACT} pairs, got {n}", "VAL_003")

    ranks = signed_ranks(d)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    p = exact_p_value(ranks, statistic) if mode == "exact" else approx_p_value(ranks, statistic)
    return WilcoxonResult(statistic=statistic, p_value=p, n=n, mode=mode, w_plus=w_plus, w_minus=w_minus)


def median_fold_select(scores: Union[np.ndarray, Dict[str, Sequence[float]]]) -> int:
    """Fold whose model-averaged score is the lower median.

    Args:
        scores: [models, folds] array, or model -> per-fold scores

    Returns:
        Smallest fold index attaining the lower-median fold mean
    """
    if isinstance(scores, dict):
        scores = np.array([list(v) for _, v in sorted(scores.items())], dtype=np.float64)
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.shape[1] < 1:
        raise ValidationError("median_fold_select needs at least one fold", "VAL_001")
    fold_means = scores.mean(axis=0)
    target = np.sort(fold_means)[(len(fold_means) - 1) // 2]
    return int(np.flatnonzero(fold_means == target)[0])
