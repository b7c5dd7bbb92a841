"""Sandwich variance, Wald intervals, and t-statistics.

The normal quantile is computed internally (rational approximation with one
Halley refinement against the erfc-based CDF; absolute error well below 1e-8)
so no statistical library is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model_core import Dataset, Family, dtau_dtheta, tau, xi_matrix


class DegenerateHessianError(ZeroDivisionError):
    """Sample mean of dtau/dtheta is numerically zero."""


class UndefinedStatisticError(ZeroDivisionError):
    """t-statistic requested with zero variance."""


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# Acklam's rational approximation coefficients for the inverse normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF, |error| < 1e-8 on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    p_low, p_high = 0.02425, 1 - 0.02425
    if p < p_low:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    # One Halley refinement against the exact CDF.
    e = normal_cdf(x) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    x = x - u / (1 + x * u / 2)
    return x


@dataclass(frozen=True)
class IntervalEstimate:
    theta: float
    variance: float
    level: float
    low: float
    high: float
    t_stat: float | None = None


def sandwich_variance(fam: Family, data: Dataset, theta: float, alpha, gamma) -> float:
    """V_hat = E{tau^2} / E^2{dtau/dtheta}, the variance of sqrt(n)(theta_hat - theta*)."""
    xi = xi_matrix(data.x)
    t = tau(fam, data.y, data.z, xi, theta, alpha, gamma)
    h = dtau_dtheta(fam, data.y, data.z, xi, theta, alpha, gamma)
    hbar = float(np.mean(h))
    if abs(hbar) < 1e-12:
        raise DegenerateHessianError("mean dtau/dtheta is numerically zero")
    return float(np.mean(t * t)) / hbar ** 2


def wald_interval(theta: float, variance: float, n: int, level: float = 0.95,
                  theta_star: float | None = None) -> IntervalEstimate:
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    zc = normal_quantile(1.0 - (1.0 - level) / 2.0)
    half = zc * math.sqrt(variance / n)
    t = None
    if theta_star is not None:
        t = t_statistic(theta, theta_star, variance, n)
    return IntervalEstimate(theta=float(theta), variance=float(variance),
                            level=float(level), low=float(theta - half),
                            high=float(theta + half), t_stat=t)


def t_statistic(theta: float, theta_star: float, variance: float, n: int) -> float:
    if variance <= 0:
        raise UndefinedStatisticError("variance must be positive for a t-statistic")
    return float((theta - theta_star) / math.sqrt(variance / n))
