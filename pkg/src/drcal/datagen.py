"""Simulation settings C1-C9.

C1-C6 draw a binary exposure and Gaussian covariates through discriminant
constructions (so the implied propensity is an exact logistic or
logistic-quadratic function of x), then a Gaussian or Poisson outcome.
C7-C9 draw (z, y) jointly from a 2x2 odds-ratio table whose cells are
log-linear in user-chosen shift functions h1, h2.

All randomness flows through RngStream, a counter-based scheme keyed by
(seed, replicate_index, stream tag), so replicates are reproducible and
independent of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .glm_lasso import expit
from .model_core import Dataset

SETTING_IDS = tuple(f"C{i}" for i in range(1, 10))

# Linear-discriminant class-1 mean (first five coordinates; zero elsewhere)
# and the quadratic variant's four-coordinate mean.
MU1_LINEAR = np.array([-0.25, 0.5, 0.75, 1.0, 1.25]) / 2.0
MU1_QUAD = np.array([-0.25, 0.5, 0.75, 1.0]) / 2.0
# Sparse slope vector shared by the odds-ratio settings.
V_ODDS = np.array([-0.25, 0.25, 0.5, 0.75]) / 2.0

_THETA_STAR = {"C1": 3.0, "C2": 3.0, "C3": 3.0,
               "C4": 2.0, "C5": 2.0, "C6": 2.0,
               "C7": 2.0, "C8": 2.0, "C9": 2.0}
_MIN_P = {"C1": 5, "C2": 4, "C3": 5, "C4": 5, "C5": 4, "C6": 5,
          "C7": 4, "C8": 4, "C9": 4}

# Stream tags: one per random draw so the draw order is fixed by construction.
TAG_Z = 0
TAG_X = 1
TAG_Y = 2


class SettingConfigError(ValueError):
    """Invalid simulation-setting configuration."""


@dataclass(frozen=True)
class Setting:
    id: str
    n: int
    p: int
    theta_star: float
    supplement_variant: bool = False

    def __post_init__(self):
        if self.id not in SETTING_IDS:
            raise SettingConfigError(f"unknown setting id {self.id!r}")
        if self.n < 1:
            raise SettingConfigError("n must be >= 1")
        if self.p < _MIN_P[self.id]:
            raise SettingConfigError(
                f"setting {self.id} needs p >= {_MIN_P[self.id]} for its sparse "
                f"coefficient pattern (got p={self.p})")
        if self.supplement_variant and self.id not in ("C7", "C8", "C9"):
            raise SettingConfigError(
                "supplement_variant applies to C7-C9 only")


def setting(id: str, n: int, p: int, theta_star: float | None = None,
            supplement_variant: bool = False) -> Setting:
    if id not in SETTING_IDS:
        raise SettingConfigError(f"unknown setting id {id!r}")
    if theta_star is None:
        theta_star = _THETA_STAR[id]
    return Setting(id=id, n=int(n), p=int(p), theta_star=float(theta_star),
                   supplement_variant=supplement_variant)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random streams keyed by (seed, replicate_index, tag)."""

    seed: int
    replicate_index: int

    def generator(self, tag: int) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.replicate_index, tag])
        return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# discriminant constructions


def discriminant_logit_linear(mu0, mu1, sigma, q):
    """Logistic coefficients of P(class 1 | x) for equal-covariance Gaussians.

    Returns (beta0, beta1) with P = expit(beta0 + beta1 @ x) exactly.
    """
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    s_mu1 = np.linalg.solve(sigma, mu1)
    s_mu0 = np.linalg.solve(sigma, mu0)
    beta1 = s_mu1 - s_mu0
    beta0 = (-0.5 * float(mu1 @ s_mu1) + 0.5 * float(mu0 @ s_mu0)
             + math.log(q / (1.0 - q)))
    return beta0, beta1


def discriminant_logit_quadratic(mu0, mu1, sigma0, sigma1, q):
    """Quadratic-discriminant coefficients: P = expit(b0 + b1@x + x@omega@x)."""
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    inv0 = np.linalg.inv(sigma0)
    inv1 = np.linalg.inv(sigma1)
    sign0, logdet0 = np.linalg.slogdet(sigma0)
    sign1, logdet1 = np.linalg.slogdet(sigma1)
    if sign0 <= 0 or sign1 <= 0:
        raise np.linalg.LinAlgError("covariance matrices must be positive definite")
    beta1 = inv1 @ mu1 - inv0 @ mu0
    omega = 0.5 * (inv0 - inv1)
    beta0 = (-0.5 * float(mu1 @ inv1 @ mu1) + 0.5 * float(mu0 @ inv0 @ mu0)
             + math.log(q / (1.0 - q)) + 0.5 * (logdet0 - logdet1))
    return beta0, beta1, omega


# ---------------------------------------------------------------------------
# odds-ratio table


def odds_ratio_cell_probs(x, theta_star, beta1, beta2, h1, h2):
    """Joint cell probabilities of (z, y) given x from the 2x2 table.

    Cells are proportional to (1, e^{b1+h1}, e^{b2+h2}, e^{t*+b1+b2+h1+h2})
    in the order (z=0,y=0), (z=1,y=0), (z=0,y=1), (z=1,y=1).  The implied
    conditionals are P(y=1|x,z) = expit(t*z + b2 + h2(x)) and
    P(z=1|x,y=0) = expit(b1 + h1(x)).
    """
    x = np.asarray(x, dtype=np.float64)
    e1 = beta1 + float(h1(x))
    e2 = beta2 + float(h2(x))
    exponents = np.array([0.0, e1, e2, theta_star + e1 + e2])
    if not np.all(np.isfinite(exponents)) or np.any(exponents > 700.0):
        raise OverflowError("odds-ratio cell exponent overflow")
    cells = np.exp(exponents)
    return cells / cells.sum()


def _odds_ratio_logits(setting_id, supplement_variant, x, theta_star):
    """Per-row cell log-weights (n, 4) for C7-C9."""
    vx = x[:, :4] @ V_ODDS
    nonlin = 0.25 * x[:, 0] + 0.8 * x[:, 1] + expit(x[:, 2])
    if supplement_variant:
        b1, b2 = 0.25, -0.25
        if setting_id == "C7":
            h1, h2 = vx, vx
        elif setting_id == "C8":
            h1 = vx
            h2 = 0.25 * x[:, 0] + 5.0 * x[:, 1] + expit(x[:, 2])
        else:
            h1, h2 = nonlin, vx
    else:
        # Main-text convention: effective beta2 = 0.
        b2 = 0.0
        if setting_id == "C7":
            b1, h1, h2 = 0.25, vx, vx
        elif setting_id == "C8":
            b1 = 0.0
            h1 = -0.25 + nonlin
            h2 = vx
        else:
            b1, h1 = 0.25, vx
            h2 = -0.25 + nonlin
    n = x.shape[0]
    logits = np.zeros((n, 4))
    logits[:, 1] = b1 + h1
    logits[:, 2] = b2 + h2
    logits[:, 3] = theta_star + b1 + b2 + h1 + h2
    return logits


@lru_cache(maxsize=8)
def toeplitz_cholesky(p: int) -> np.ndarray:
    """Lower Cholesky factor of the Toeplitz covariance 0.5^|j-k|."""
    idx = np.arange(p)
    cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(cov)


# ---------------------------------------------------------------------------
# dataset generation


def _padded(vec, p):
    out = np.zeros(p)
    out[: len(vec)] = vec
    return out


def _linear_discriminant_zx(n, p, gz, gx):
    """(z, x) for the C1-style equal-covariance construction."""
    mu1 = _padded(MU1_LINEAR, p)
    z = (gz.random(n) < 0.5).astype(np.float64)
    x = gx.standard_normal((n, p)) + z[:, None] * mu1
    return z, x


def _quadratic_discriminant_zx(n, p, gz, gx):
    """(z, x) for the C2 construction: Sigma0 = I, Sigma1 = I/2."""
    mu1 = _padded(MU1_QUAD, p)
    z = (gz.random(n) < 0.5).astype(np.float64)
    eps = gx.standard_normal((n, p))
    scale = np.where(z == 1.0, 1.0 / math.sqrt(2.0), 1.0)
    x = z[:, None] * mu1 + scale[:, None] * eps
    return z, x


def _gaussian_outcome(mean, gy):
    return mean + math.sqrt(0.5) * gy.standard_normal(mean.shape[0])


def gen_setting(st: Setting, rng: RngStream) -> Dataset:
    """Generate one replicate dataset; pure given (setting, rng)."""
    n, p, ts = st.n, st.p, st.theta_star
    gz = rng.generator(TAG_Z)
    gx = rng.generator(TAG_X)
    gy = rng.generator(TAG_Y)

    if st.id in ("C1", "C3", "C4", "C6"):
        z, x = _linear_discriminant_zx(n, p, gz, gx)
    elif st.id in ("C2", "C5"):
        z, x = _quadratic_discriminant_zx(n, p, gz, gx)
    else:  # C7-C9
        x = gx.standard_normal((n, p)) @ toeplitz_cholesky(p).T
        logits = _odds_ratio_logits(st.id, st.supplement_variant, x, ts)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        u = gz.random(n)
        cat = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
        z = np.isin(cat, (1, 3)).astype(np.float64)
        y = (cat >= 2).astype(np.float64)
        return Dataset(y=y, z=z, x=x)

    if st.id in ("C1", "C2"):
        mean = ts * z + 0.25 * x[:, 0] + 1.5 * x[:, 1] + 1.75 * x[:, 2] + 5.0 * x[:, 3]
        y = _gaussian_outcome(mean, gy)
    elif st.id == "C3":
        mean = (ts * z + expit(0.5 * x[:, 0] + x[:, 1])
                + 4.0 * (x[:, 2] - 0.75) + 2.0 * (x[:, 3] - 1.0) ** 2)
        y = _gaussian_outcome(mean, gy)
    elif st.id in ("C4", "C5"):
        rate = np.exp(ts * z + 0.1 * x[:, 0] + 0.25 * x[:, 1]
                      + 0.5 * x[:, 2] + 0.75 * x[:, 3])
        y = gy.poisson(rate).astype(np.float64)
    else:  # C6
        rate = np.exp(ts * z + x[:, 0] + 0.1 * x[:, 1] ** 2 + 0.2 * x[:, 2] ** 2)
        y = gy.poisson(rate).astype(np.float64)
    return Dataset(y=y, z=z, x=x)


def propensity(st: Setting, x: np.ndarray) -> np.ndarray:
    """True P(z=1 | x) for the discriminant settings (oracle for tests)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p = x.shape[1]
    if st.id in ("C1", "C3", "C4", "C6"):
        mu1 = _padded(MU1_LINEAR, p)
        b0, b1 = discriminant_logit_linear(np.zeros(p), mu1, np.eye(p), 0.5)
        return expit(b0 + x @ b1)
    if st.id in ("C2", "C5"):
        mu1 = _padded(MU1_QUAD, p)
        b0, b1, om = discriminant_logit_quadratic(
            np.zeros(p), mu1, np.eye(p), 0.5 * np.eye(p), 0.5)
        return expit(b0 + x @ b1 + np.einsum("ij,jk,ik->i", x, om, x))
    raise SettingConfigError(f"no closed-form propensity for {st.id}")
