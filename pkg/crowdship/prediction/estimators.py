# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import math

__all__ = ["GaussianEstimator"]


class GaussianEstimator:
    """
    Incremental mean and variance of a numeric attribute (Welford's update).

    The variance is the unbiased sample variance and is 0 for fewer than two observations.
    """

    __slots__ = ("count", "mean", "m2")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        if self.count <= 1:
            return 0.0
        return max(0.0, self.m2 / (self.count - 1))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_pdf(self, x: float, min_variance: float) -> float:
        """
        Log density of `x` under the fitted normal distribution.

        Args:
            x: float: The attribute value
            min_variance: float: Lower bound applied to the variance

        Returns:
            float: The log density
        """
        var = max(self.variance, min_variance)
        return -0.5 * math.log(2 * math.pi * var) - (x - self.mean) ** 2 / (2 * var)

    def cdf(self, x: float) -> float:
        """Fraction of the observed mass expected at or below `x`"""
        if self.count == 0:
            return 0.0
        std = self.std
        if self.count < 2 or std == 0.0:
            return 1.0 if self.mean <= x else 0.0
        return 0.5 * (1.0 + math.erf((x - self.mean) / (std * math.sqrt(2.0))))

    def __repr__(self) -> str:
        return f"GaussianEstimator(count={self.count}, mean={self.mean:.4f}, variance={self.variance:.4f})"
