"""Estimator statistics: Wilson intervals, normal CIs, heavy-tail diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps

__all__ = ["EstimateWithCI", "wilson_interval", "mean_with_ci", "proportion_with_ci",
           "combined_se", "sample_kurtosis"]

_Z95 = float(sps.norm.ppf(0.975))


@dataclass(frozen=True)
class EstimateWithCI:
    """Point estimate with a 95% interval and the censoring context of the run."""

    value: float
    lo: float
    hi: float
    se: float
    n: int
    kind: str                      # "proportion" or "mean"
    k_max: Optional[float] = None
    n_max: Optional[int] = None
    h: Optional[float] = None
    heavy_tail: bool = False       # sample kurtosis above 100, normal CI suspect
    kurtosis: Optional[float] = None

    def __post_init__(self):
        if not (self.lo <= self.value + 1e-12 and self.value <= self.hi + 1e-12):
            raise ValueError(f"interval [{self.lo}, {self.hi}] does not bracket {self.value}")
        if self.kind == "proportion" and not (-1e-12 <= self.value <= 1 + 1e-12):
            raise ValueError(f"proportion {self.value} outside [0, 1]")


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Score interval for a binomial proportion; stable at the 0/1 edges."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes outside [0, n]")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


def proportion_with_ci(successes: int, n: int, *, k_max=None, n_max=None, h=None) -> EstimateWithCI:
    p = successes / n
    lo, hi = wilson_interval(successes, n)
    se = math.sqrt(max(p * (1 - p), 0.0) / n)
    return EstimateWithCI(value=p, lo=lo, hi=hi, se=se, n=n, kind="proportion",
                          k_max=k_max, n_max=n_max, h=h)


def sample_kurtosis(xs: np.ndarray) -> float:
    """Pearson kurtosis m4/m2^2 (normal = 3); large values flag tail risk."""
    xs = np.asarray(xs, dtype=float)
    m = xs.mean()
    d = xs - m
    m2 = float(np.mean(d * d))
    if m2 == 0.0:
        return 0.0
    m4 = float(np.mean(d ** 4))
    return m4 / (m2 * m2)


def mean_with_ci(xs: np.ndarray, *, k_max=None, n_max=None, h=None) -> EstimateWithCI:
    """Sample mean with a normal CI; kurtosis above 100 sets the heavy-tail caveat."""
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    if n < 2:
        raise ValueError("need at least two samples")
    m = float(xs.mean())
    se = float(xs.std(ddof=1) / math.sqrt(n))
    kurt = sample_kurtosis(xs)
    return EstimateWithCI(value=m, lo=m - _Z95 * se, hi=m + _Z95 * se, se=se, n=n,
                          kind="mean", k_max=k_max, n_max=n_max, h=h,
                          heavy_tail=kurt > 100.0, kurtosis=kurt)


def combined_se(se_a: float, se_b: float) -> float:
    return math.sqrt(se_a * se_a + se_b * se_b)
