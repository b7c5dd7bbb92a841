"""The four semiparametric model families.

Encodes, per family, the doubly robust estimating function tau, its
theta-derivative, the closed-form theta solvers given nuisance coefficients,
and the two calibration losses mapped onto GlmProblem instances:
build_l2_problem yields the problem whose L1-penalized minimizer is the
calibrated exposure-model fit (gamma_hat_2) and build_l1_problem the one whose
minimizer is the calibrated outcome-model fit (alpha_hat_2).

Coefficient vectors alpha and gamma have length p+1 with the intercept first,
matching the regressor vector xi(x) = (1, x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .glm_lasso import GlmProblem, expit, expit2, make_problem

FAMILY_KINDS = ("pl", "pll", "plogit", "mar_mean")
LINKS = ("identity", "expit")


class PropensityUnderflowError(ValueError):
    """Fitted propensity too close to zero for inverse weighting."""


class DegenerateDenominatorError(ZeroDivisionError):
    """Closed-form theta solver denominator is numerically zero."""


class NonPositiveRatioError(ValueError):
    """Closed-form ratio is non-positive, so theta is undefined on the log scale."""


class WeightOverflowError(FloatingPointError):
    """Calibration weights overflowed."""


@dataclass(frozen=True)
class Family:
    """kind: one of FAMILY_KINDS; psi_g / psi_f: link names ('identity'/'expit')."""

    kind: str
    psi_g: str
    psi_f: str

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.psi_g not in LINKS or self.psi_f not in LINKS:
            raise ValueError("links must be 'identity' or 'expit'")
        if self.kind == "mar_mean" and self.psi_f != "expit":
            raise ValueError("mar_mean requires an expit exposure link")


_DEFAULT_PSI_G = {"pl": "identity", "pll": "identity", "plogit": "expit",
                  "mar_mean": "identity"}


def family(kind: str, psi_f: str = "expit", psi_g: str | None = None) -> Family:
    if psi_g is None:
        psi_g = _DEFAULT_PSI_G.get(kind, "identity")
    return Family(kind=kind, psi_g=psi_g, psi_f=psi_f)


def link_value(name, u):
    if name == "identity":
        return np.asarray(u, dtype=np.float64)
    return expit(u)


def link_deriv(name, u):
    if name == "identity":
        return np.ones_like(np.asarray(u, dtype=np.float64))
    return expit2(u)


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).ravel()
        z = np.asarray(self.z, dtype=np.float64).ravel()
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if y.shape[0] != x.shape[0] or z.shape[0] != x.shape[0]:
            raise ValueError("y, z, x must share n rows")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in x")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def validate(data: Dataset, fam: Family) -> None:
    z = data.z
    y = data.y
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("z must be binary in {0,1}")
    if fam.kind == "plogit" and not np.all((y == 0) | (y == 1)):
        raise ValueError("plogit family requires binary y")
    if fam.kind == "mar_mean":
        if not np.all(np.isfinite(y[z == 1])):
            raise ValueError("mar_mean requires finite y wherever z=1")
    elif not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in y")


def xi_matrix(x: np.ndarray) -> np.ndarray:
    """Regressor matrix (1, x) with the constant first."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.column_stack([np.ones(x.shape[0]), x])


@dataclass(frozen=True)
class NuisanceFit:
    alpha: np.ndarray
    gamma: np.ndarray
    stage: str  # "initial" or "calibrated"


def _lin(xi, coef):
    return np.asarray(xi, dtype=np.float64) @ np.asarray(coef, dtype=np.float64)


def _observed_y(y, z):
    """y with unobserved (z=0) entries replaced by 0 so they never enter sums."""
    return np.where(z == 1, np.where(np.isfinite(y), y, 0.0), 0.0)


def tau(fam: Family, y, z, xi, theta, alpha, gamma):
    """Estimating-function values; scalar in, scalar out; vector in, vector out."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    a = _lin(xi, alpha)
    f = link_value(fam.psi_f, _lin(xi, gamma))
    if fam.kind == "pl":
        out = (y - theta * z - a) * (z - f)
    elif fam.kind == "pll":
        out = (y * np.exp(-theta * z) - np.exp(a)) * (z - f)
    elif fam.kind == "plogit":
        out = np.exp(-theta * z * y) * (y - expit(a)) * (z - f)
    else:  # mar_mean
        used = np.broadcast_to(z == 1, np.shape(f))
        if np.any(used & (f <= 1e-12)):
            i = int(np.argmax(used & (f <= 1e-12)))
            raise PropensityUnderflowError(
                f"propensity underflow at observation {i} (psi_f={np.ravel(f)[i]:.3g})")
        yo = _observed_y(y, z)
        out = z * yo / f - (z / f - 1.0) * link_value(fam.psi_g, a) - theta
    if np.ndim(y) == 0 and out.size == 1:
        return float(np.ravel(out)[0])
    return np.ravel(out)


def dtau_dtheta(fam: Family, y, z, xi, theta, alpha, gamma):
    """Analytic partial derivative of tau in theta."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    f = link_value(fam.psi_f, _lin(xi, gamma))
    if fam.kind == "pl":
        out = -z * (z - f)
    elif fam.kind == "pll":
        out = -z * y * np.exp(-theta * z) * (z - f)
    elif fam.kind == "plogit":
        a = _lin(xi, alpha)
        out = -z * y * np.exp(-theta * z * y) * (y - expit(a)) * (z - f)
    else:
        out = -np.ones(np.broadcast_shapes(np.shape(y), np.shape(f)))
    if np.ndim(y) == 0 and out.size == 1:
        return float(np.ravel(out)[0])
    return np.ravel(out)


def solve_theta(fam: Family, data: Dataset, alpha, gamma) -> float:
    """Closed-form theta with sample mean of tau exactly zero."""
    xi = xi_matrix(data.x)
    y, z = data.y, data.z
    a = _lin(xi, alpha)
    f = link_value(fam.psi_f, _lin(xi, gamma))

    if fam.kind == "pl":
        den = float(np.mean(z * (z - f)))
        if abs(den) < 1e-12:
            raise DegenerateDenominatorError("E{z(z - psi_f)} is numerically zero")
        return float(np.mean((y - a) * (z - f))) / den

    if fam.kind == "pll":
        _require_binary(z, "z")
        den = float(np.sum(z * y * (1.0 - f)))
        if abs(den) < 1e-12:
            raise DegenerateDenominatorError("sum over z=1 of y(1 - psi_f) is zero")
        ea = np.exp(a)
        num = float(np.sum(z * ea * (1.0 - f)) + np.sum((1.0 - z) * (y - ea) * f))
        ratio = num / den
        if ratio <= 0:
            raise NonPositiveRatioError(f"closed-form ratio {ratio:.3g} <= 0")
        return -float(np.log(ratio))

    if fam.kind == "plogit":
        _require_binary(z, "z")
        _require_binary(y, "y")
        pa = expit(a)
        both = (z == 1) & (y == 1)
        den = float(np.sum((1.0 - pa[both]) * (1.0 - f[both])))
        if abs(den) < 1e-12:
            raise DegenerateDenominatorError("sum over z=1,y=1 cell is zero")
        num = -float(np.sum(((y - pa) * (z - f))[~both]))
        ratio = num / den
        if ratio <= 0:
            raise NonPositiveRatioError(f"closed-form ratio {ratio:.3g} <= 0")
        return -float(np.log(ratio))

    # mar_mean: plug-in mean
    used = (z == 1) & (f <= 1e-12)
    if np.any(used):
        i = int(np.argmax(used))
        raise PropensityUnderflowError(f"propensity underflow at observation {i}")
    yo = _observed_y(y, z)
    g = link_value(fam.psi_g, a)
    return float(np.mean(z * yo / f - (z / f - 1.0) * g))


def _require_binary(v, name):
    if not np.all((v == 0) | (v == 1)):
        raise ValueError(f"{name} must be binary for this closed form")


def solve_theta_bisect(fam: Family, data: Dataset, alpha, gamma,
                       lo: float = -20.0, hi: float = 20.0,
                       tol: float = 1e-12) -> float:
    """Bisection root of the sample estimating equation on [lo, hi].

    Fallback for non-binary exposures and the oracle used in tests.
    """
    xi = xi_matrix(data.x)

    def mean_tau(theta):
        return float(np.mean(tau(fam, data.y, data.z, xi, theta, alpha, gamma)))

    flo, fhi = mean_tau(lo), mean_tau(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError("estimating equation does not change sign on the bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = mean_tau(mid)
        if fm == 0.0 or (hi - lo) < tol:
            return mid
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def _checked_exp(u, what):
    w = np.exp(np.minimum(u, 710.0))
    if not np.all(np.isfinite(w)) or np.any(u > 700.0):
        i = int(np.argmax(u))
        raise WeightOverflowError(f"{what} overflowed at observation {i} (exponent {u[i]:.3g})")
    return w


def build_l2_problem(fam: Family, data: Dataset, theta1: float, alpha1) -> GlmProblem:
    """Problem whose penalized minimizer is the calibrated exposure fit."""
    xi = xi_matrix(data.x)
    y, z, x = data.y, data.z, data.x
    a1 = _lin(xi, alpha1)
    f_loss = "logistic" if fam.psi_f == "expit" else "squared"
    if fam.kind == "pl":
        return make_problem(x, z, loss_kind=f_loss)
    if fam.kind == "pll":
        w = _checked_exp(a1, "exposure calibration weight e^(alpha1.xi)")
        return make_problem(x, z, weights=w, loss_kind=f_loss)
    if fam.kind == "plogit":
        w = _checked_exp(-theta1 * z * y, "weight e^(-theta1 z y)") * expit2(a1)
        return make_problem(x, z, weights=w, loss_kind=f_loss)
    # mar_mean: loss z*exp(-eta) + (1-z)*eta with weights psi_g'(alpha1.xi)
    w = link_deriv(fam.psi_g, a1)
    return make_problem(x, z, weights=w, loss_kind="calibration_expit")


def build_l1_problem(fam: Family, data: Dataset, theta1: float, gamma2) -> GlmProblem:
    """Problem whose penalized minimizer is the calibrated outcome fit."""
    xi = xi_matrix(data.x)
    y, z, x = data.y, data.z, data.x
    g2 = _lin(xi, gamma2)
    df = link_deriv(fam.psi_f, g2)
    if fam.kind == "pl":
        return make_problem(x, y, weights=df, offset=theta1 * z, loss_kind="squared")
    if fam.kind == "pll":
        w = _checked_exp(-theta1 * z, "weight e^(-theta1 z)") * df
        return make_problem(x, y, weights=w, offset=theta1 * z, loss_kind="poisson")
    if fam.kind == "plogit":
        w = _checked_exp(-theta1 * z * y, "weight e^(-theta1 z y)") * df
        return make_problem(x, y, weights=w, loss_kind="logistic")
    # mar_mean: outcome regression on the observed subsample with inverse-odds
    # weights psi_f'/psi_f^2 (gamma2.xi) = e^(-gamma2.xi) for the expit link.
    f = link_value(fam.psi_f, g2)
    w = z * df / (f * f)
    if not np.all(np.isfinite(w)):
        i = int(np.argmax(~np.isfinite(w)))
        raise WeightOverflowError(f"inverse-odds weight overflowed at observation {i}")
    g_loss = "squared" if fam.psi_g == "identity" else "logistic"
    return make_problem(x, _observed_y(y, z), weights=w, loss_kind=g_loss)


def calibration_gradient_alpha(fam: Family, data: Dataset, theta, alpha, gamma):
    """Sample mean of the alpha-gradient of tau (the L2 estimating equations)."""
    xi = xi_matrix(data.x)
    y, z = data.y, data.z
    a = _lin(xi, alpha)
    f = link_value(fam.psi_f, _lin(xi, gamma))
    if fam.kind == "pl":
        s = -(z - f)
    elif fam.kind == "pll":
        s = -np.exp(a) * (z - f)
    elif fam.kind == "plogit":
        s = -np.exp(-theta * z * y) * expit2(a) * (z - f)
    else:
        s = -(z / f - 1.0) * link_deriv(fam.psi_g, a)
    return (s @ xi) / data.n


def calibration_gradient_gamma(fam: Family, data: Dataset, theta, alpha, gamma):
    """Sample mean of the gamma-gradient of tau (the L1 estimating equations)."""
    xi = xi_matrix(data.x)
    y, z = data.y, data.z
    a = _lin(xi, alpha)
    g = _lin(xi, gamma)
    df = link_deriv(fam.psi_f, g)
    if fam.kind == "pl":
        s = -(y - theta * z - a) * df
    elif fam.kind == "pll":
        s = -(y * np.exp(-theta * z) - np.exp(a)) * df
    elif fam.kind == "plogit":
        s = -np.exp(-theta * z * y) * (y - expit(a)) * df
    else:
        f = link_value(fam.psi_f, g)
        yo = _observed_y(y, z)
        s = -z * (df / (f * f)) * (yo - link_value(fam.psi_g, a))
    return (s @ xi) / data.n
