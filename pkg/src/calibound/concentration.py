"""Finite-sample concentration terms used by all certifiers."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["bernstein_bound", "empirical_variance", "dkw_bound"]


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def bernstein_bound(n: int, delta: float, sigma2_hat: float) -> float:
    """Empirical Bernstein deviation for the mean of ``n`` i.i.d. values in [0, 1].

    With probability at least ``1 - delta`` the true mean is below the sample
    mean plus::

        sqrt(2 * sigma2_hat * ln(3/delta) / n) + 3 * ln(3/delta) / n

    where ``sigma2_hat`` is the divisor-``n`` sample variance.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _check_delta(delta)
    if not 0.0 <= sigma2_hat <= 0.25 + 1e-12:
        raise ValueError(f"sigma2_hat must lie in [0, 0.25], got {sigma2_hat}")
    log_term = math.log(3.0 / delta)
    return math.sqrt(2.0 * sigma2_hat * log_term / n) + 3.0 * log_term / n


def empirical_variance(values) -> float:
    """Population-style (divisor n) variance of values supported on [0, 1]."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empirical_variance of an empty sequence")
    mean = math.fsum(x) / x.size
    var = math.fsum((x - mean) ** 2) / x.size
    # rounding can push a [0,1]-supported variance a hair past 1/4
    return min(max(var, 0.0), 0.25)


def dkw_bound(n: int, delta: float) -> float:
    """Dvoretzky-Kiefer-Wolfowitz radius ``sqrt(ln(2/delta) / (2n))``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _check_delta(delta)
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))
