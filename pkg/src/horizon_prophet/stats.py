"""Monte Carlo summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WelfareEstimate:
    mean: float
    stderr: float
    trials: int

    @property
    def ci95(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "WelfareEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(x.mean()), se, n)


def ratio_of_means(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio of sample means and its delta-method standard error.

    The paired form keeps the covariance between numerator and denominator.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    a, b = num.mean(), den.mean()
    if b == 0:
        return math.inf, math.inf
    r = a / b
    resid = num - r * den
    se = float(resid.std(ddof=1) / (math.sqrt(n) * abs(b))) if n > 1 else math.inf
    return float(r), se


def ratio_stderr_independent(num: WelfareEstimate, den: WelfareEstimate) -> float:
    """Delta-method standard error of num/den for independent estimates."""
    r = num.mean / den.mean
    return abs(r) * math.sqrt((num.stderr / num.mean) ** 2 + (den.stderr / den.mean) ** 2)
