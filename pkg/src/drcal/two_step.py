"""Two-step regularized calibrated estimation.

Step one fits the working models by penalized (quasi-)likelihood: a joint
outcome regression of y on (z, x) with the z coefficient penalized, and a
penalized regression of z on x, giving (theta0, alpha1, gamma1) and the
plug-in theta1.  Step two refits both nuisances by minimizing the calibration
losses (gamma2 from the exposure-calibration loss, then alpha2 from the
outcome-calibration loss) and plugs them into the closed-form theta solver.
Each stage selects its lambda by its own deterministic K-fold CV.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import glm_lasso, inference, model_core
from .glm_lasso import cv_select, fit_lasso, make_problem
from .model_core import Dataset, Family, NuisanceFit

# Stage indices for deterministic per-stage CV fold seeds.
STAGE_JOINT = 0
STAGE_GAMMA1 = 1
STAGE_GAMMA2 = 2
STAGE_ALPHA2 = 3


class StageError(RuntimeError):
    """An estimation stage failed; .stage names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


@dataclass(frozen=True)
class TwoStepConfig:
    n_folds: int = 5
    seed: int = 0
    n_lambda: int = 100
    min_ratio: float | None = None
    share_lambda_initial: bool = False
    tol: float = 1e-7

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")


@dataclass(frozen=True)
class DrFit:
    theta: float
    variance: float
    ci_low: float
    ci_high: float
    nuisance: NuisanceFit
    method: str  # "initial", "two_step", or "debiased"
    theta0: float | None = None
    lambdas: dict = field(default_factory=dict)


@dataclass(frozen=True)
class InitialFit:
    theta0: float | None
    alpha1: np.ndarray
    gamma1: np.ndarray
    theta1: float
    lambdas: dict


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def _coef_vector(fit: glm_lasso.LassoFit) -> np.ndarray:
    return np.concatenate([[fit.intercept], fit.coefficients])


def _run_stage(name, fn):
    try:
        return fn()
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - stage name is part of the contract
        raise StageError(name, str(e)) from e


def initial_estimate(data: Dataset, fam: Family, cfg: TwoStepConfig) -> InitialFit:
    """Penalized ML/quasi-likelihood fits and the plug-in theta1."""
    model_core.validate(data, fam)
    y, z, x = data.y, data.z, data.x
    lambdas = {}

    def joint():
        if fam.kind == "mar_mean":
            # Outcome regression on the observed subsample; no theta coordinate.
            loss = "squared" if fam.psi_g == "identity" else "logistic"
            prob = make_problem(x, model_core._observed_y(y, z), weights=z,
                                loss_kind=loss)
            cv = cv_select(prob, n_folds=cfg.n_folds,
                           seed=stage_seed(cfg.seed, STAGE_JOINT),
                           n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
            return None, _coef_vector(cv.fit_at_min), cv.lambda_min
        loss = {"pl": "squared", "pll": "poisson", "plogit": "logistic"}[fam.kind]
        design = np.column_stack([z, x])
        prob = make_problem(design, y, loss_kind=loss)  # z coefficient penalized too
        cv = cv_select(prob, n_folds=cfg.n_folds,
                       seed=stage_seed(cfg.seed, STAGE_JOINT),
                       n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
        f = cv.fit_at_min
        theta0 = float(f.coefficients[0])
        alpha1 = np.concatenate([[f.intercept], f.coefficients[1:]])
        return theta0, alpha1, cv.lambda_min

    theta0, alpha1, lam1 = _run_stage("joint_initial", joint)
    lambdas["joint_initial"] = lam1

    def gamma_stage():
        f_loss = "logistic" if fam.psi_f == "expit" else "squared"
        if fam.kind == "plogit":
            keep = y == 0
            prob = make_problem(x[keep], z[keep], loss_kind=f_loss)
        else:
            prob = make_problem(x, z, loss_kind=f_loss)
        cv = cv_select(prob, n_folds=cfg.n_folds,
                       seed=stage_seed(cfg.seed, STAGE_GAMMA1),
                       n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
        return _coef_vector(cv.fit_at_min), cv.lambda_min

    gamma1, lam2 = _run_stage("gamma1", gamma_stage)
    lambdas["gamma1"] = lam2

    theta1 = _run_stage("theta1",
                        lambda: model_core.solve_theta(fam, data, alpha1, gamma1))
    return InitialFit(theta0=theta0, alpha1=alpha1, gamma1=gamma1,
                      theta1=float(theta1), lambdas=lambdas)


def calibrated_estimate(data: Dataset, fam: Family, theta1: float, alpha1,
                        cfg: TwoStepConfig, gamma1=None, theta0=None,
                        lambda_initial=None):
    """Calibrated nuisance fits (gamma2, alpha2) and the plug-in theta2.

    Returns (gamma2, alpha2, theta2, lambdas).  For the PL family gamma2 is
    gamma1 itself (the exposure-calibration loss coincides with the initial
    logistic loss under the canonical link).  With share_lambda_initial on
    (PL + identity exposure link) alpha2 is fit at exactly the initial joint
    lambda with offset theta0*z, which makes theta2 match the debiased
    estimator algebraically.
    """
    lambdas = {}
    share = (cfg.share_lambda_initial and fam.kind == "pl"
             and fam.psi_f == "identity")
    if share and (theta0 is None or lambda_initial is None):
        raise ValueError("share_lambda_initial requires theta0 and lambda_initial")

    def gamma_stage():
        if fam.kind == "pl":
            if gamma1 is None:
                raise ValueError("PL calibration reuses gamma1; pass it in")
            return np.asarray(gamma1, dtype=np.float64), None
        prob = model_core.build_l2_problem(fam, data, theta1, alpha1)
        cv = cv_select(prob, n_folds=cfg.n_folds,
                       seed=stage_seed(cfg.seed, STAGE_GAMMA2),
                       n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
        return _coef_vector(cv.fit_at_min), cv.lambda_min

    gamma2, lam3 = _run_stage("gamma2", gamma_stage)
    if lam3 is not None:
        lambdas["gamma2"] = lam3

    def alpha_stage():
        if share:
            prob = model_core.build_l1_problem(fam, data, float(theta0), gamma2)
            f = fit_lasso(prob, float(lambda_initial), tol=min(1e-10, cfg.tol))
            return _coef_vector(f), float(lambda_initial)
        prob = model_core.build_l1_problem(fam, data, theta1, gamma2)
        cv = cv_select(prob, n_folds=cfg.n_folds,
                       seed=stage_seed(cfg.seed, STAGE_ALPHA2),
                       n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
        return _coef_vector(cv.fit_at_min), cv.lambda_min

    alpha2, lam4 = _run_stage("alpha2", alpha_stage)
    lambdas["alpha2"] = lam4

    theta2 = _run_stage("theta2",
                        lambda: model_core.solve_theta(fam, data, alpha2, gamma2))
    return gamma2, alpha2, float(theta2), lambdas


def run_two_step(data: Dataset, fam: Family, cfg: TwoStepConfig,
                 level: float = 0.95) -> DrFit:
    init = initial_estimate(data, fam, cfg)
    gamma2, alpha2, theta2, cal_lambdas = calibrated_estimate(
        data, fam, init.theta1, init.alpha1, cfg, gamma1=init.gamma1,
        theta0=init.theta0, lambda_initial=init.lambdas["joint_initial"])
    variance = _run_stage("variance", lambda: inference.sandwich_variance(
        fam, data, theta2, alpha2, gamma2))
    ci = inference.wald_interval(theta2, variance, data.n, level=level)
    lambdas = dict(init.lambdas)
    lambdas.update(cal_lambdas)
    return DrFit(theta=theta2, variance=variance, ci_low=ci.low, ci_high=ci.high,
                 nuisance=NuisanceFit(alpha=alpha2, gamma=gamma2, stage="calibrated"),
                 method="two_step", theta0=init.theta0, lambdas=lambdas)


def initial_fit_summary(data: Dataset, fam: Family, init: InitialFit,
                        level: float = 0.95) -> DrFit:
    """Plug-in sandwich inference for the initial estimator theta1."""
    variance = inference.sandwich_variance(fam, data, init.theta1,
                                           init.alpha1, init.gamma1)
    ci = inference.wald_interval(init.theta1, variance, data.n, level=level)
    return DrFit(theta=init.theta1, variance=variance, ci_low=ci.low,
                 ci_high=ci.high,
                 nuisance=NuisanceFit(alpha=init.alpha1, gamma=init.gamma1,
                                      stage="initial"),
                 method="initial", theta0=init.theta0, lambdas=dict(init.lambdas))
