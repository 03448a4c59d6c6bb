"""
Paired Wilcoxon signed-rank test with Bonferroni correction
"""
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import stats

from utils.errors import InsufficientDataError, ValidationError

MIN_NONZERO_PAIRS = 5
EXACT_MAX_N = 12


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float   # W+, sum of ranks of positive differences
    p_value: float
    n: int             # non-zero differences
    method: str        # 'exact' or 'normal'

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    signs = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    null = signs @ ranks
    centre = ranks.sum() / 2.0
    observed = abs(w_plus - centre)
    return float(np.mean(np.abs(null - centre) >= observed - 1e-9))


def _normal_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes ** 3 - tie_sizes) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(variance)
    return float(min(1.0, 2.0 * stats.norm.sf(z)))


def wilcoxon_signed_rank(paired_a: Sequence[float], paired_b: Sequence[float],
                         exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"paired samples must be equal-length 1-D lists, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("paired samples contain non-finite values")

    differences = a - b
    differences = differences[differences != 0]
    if len(differences) == 0:
        raise InsufficientDataError("all paired differences are zero; the signed-rank test is undefined")
    if len(differences) < MIN_NONZERO_PAIRS:
        raise InsufficientDataError(
            f"signed-rank test needs >= {MIN_NONZERO_PAIRS} non-zero differences, got {len(differences)}")

    ranks = stats.rankdata(np.abs(differences), method='average')
    w_plus = float(ranks[differences > 0].sum())
    if len(ranks) <= exact_max_n:
        return WilcoxonResult(w_plus, _exact_p(ranks, w_plus), len(ranks), 'exact')
    return WilcoxonResult(w_plus, _normal_p(ranks, w_plus), len(ranks), 'normal')


def bonferroni(p_values: Sequence[float], family_size: Optional[int] = None) -> np.ndarray:
    """p * m capped at 1; m defaults to the number of p-values"""
    p = np.asarray(p_values, dtype=np.float64)
    m = len(p) if family_size is None else family_size
    if m < 1:
        raise ValidationError(f"family size must be >= 1, got {m}")
    return np.minimum(p * m, 1.0)
