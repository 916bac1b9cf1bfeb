"""Mergeable accumulators for batch statistics.

Partial tallies are combined with the pairwise update formulas for central
moments (Chan et al. / Pebay), and exponential moments are kept in log space,
so chunks can be reduced in any grouping with stable results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass
class Moments:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def of(cls, x: np.ndarray) -> "Moments":
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return cls()
        mean = float(np.mean(x))
        d = x - mean
        d2 = d * d
        return cls(
            count=int(x.size),
            mean=mean,
            m2=float(np.sum(d2)),
            m3=float(np.sum(d2 * d)),
            m4=float(np.sum(d2 * d2)),
        )

    def merge(self, other: "Moments") -> "Moments":
        na, nb = self.count, other.count
        if na == 0:
            return Moments(**vars(other))
        if nb == 0:
            return Moments(**vars(self))
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        m3 = (
            self.m3
            + other.m3
            + delta**3 * na * nb * (na - nb) / n**2
            + 3 * delta * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4
            + other.m4
            + delta**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
            + 6 * delta**2 * (na * na * other.m2 + nb * nb * self.m2) / n**2
            + 4 * delta * (na * other.m3 - nb * self.m3) / n
        )
        return Moments(n, mean, m2, m3, m4)

    @property
    def variance_defined(self) -> bool:
        return self.count >= 2

    @property
    def variance(self) -> float:
        """Unbiased sample variance; 0.0 when fewer than two samples."""
        if self.count < 2:
            return 0.0
        return self.m2 / (self.count - 1)

    @property
    def second_moment(self) -> float:
        if self.count == 0:
            return 0.0
        return self.m2 / self.count + self.mean**2

    @property
    def mean_se(self) -> float:
        if self.count < 2:
            return 0.0
        return math.sqrt(self.variance / self.count)

    @property
    def variance_se(self) -> float:
        # large-sample SE of the sample variance: sqrt((mu4 - s^4) / n)
        if self.count < 2:
            return 0.0
        n = self.count
        mu4 = self.m4 / n
        s2 = self.m2 / n
        return math.sqrt(max(mu4 - s2 * s2, 0.0) / n)

    @property
    def skewness(self) -> float:
        if self.count < 2 or self.m2 == 0:
            return 0.0
        return math.sqrt(self.count) * self.m3 / self.m2**1.5

    @property
    def excess_kurtosis(self) -> float:
        if self.count < 2 or self.m2 == 0:
            return 0.0
        return self.count * self.m4 / (self.m2 * self.m2) - 3.0

    @property
    def skewness_se(self) -> float:
        return math.sqrt(6.0 / self.count) if self.count else 0.0

    @property
    def kurtosis_se(self) -> float:
        return math.sqrt(24.0 / self.count) if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "mean_se": self.mean_se,
            "variance": self.variance,
            "variance_se": self.variance_se,
            "variance_defined": self.variance_defined,
            "second_moment": self.second_moment,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
        }


@dataclass
class LogMgf:
    """Running estimate of E[exp(t X)] stored as log-sums."""

    t: float
    count: int = 0
    log_s1: float = -math.inf
    log_s2: float = -math.inf

    @classmethod
    def of(cls, t: float, x: np.ndarray) -> "LogMgf":
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return cls(t)
        tx = t * x
        return cls(t, int(x.size), float(logsumexp(tx)), float(logsumexp(2 * tx)))

    def merge(self, other: "LogMgf") -> "LogMgf":
        return LogMgf(
            self.t,
            self.count + other.count,
            float(np.logaddexp(self.log_s1, other.log_s1)),
            float(np.logaddexp(self.log_s2, other.log_s2)),
        )

    @property
    def log_value(self) -> float:
        return self.log_s1 - math.log(self.count)

    @property
    def value(self) -> float:
        return math.exp(self.log_value)

    @property
    def se(self) -> float:
        n = self.count
        if n < 2:
            return 0.0
        # relative variance = E[e^{2tX}] / E[e^{tX}]^2 - 1
        rel = math.expm1(self.log_s2 + math.log(n) - 2 * self.log_s1)
        rel = max(rel, 0.0) * n / (n - 1)
        return self.value * math.sqrt(rel / n)

    def to_dict(self) -> dict:
        return {"zeta": self.t, "value": self.value, "se": self.se}
