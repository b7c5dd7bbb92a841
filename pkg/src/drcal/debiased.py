"""Debiased-Lasso comparator estimators.

Each estimator corrects the z coefficient of a joint penalized regression of
y on (z, x) by projecting z linearly on x (penalized least squares, possibly
weighted by the fitted curvature) and adding a one-step correction term.
Only the single coefficient theta is debiased.  The robust variance defaults
to the product-second-moment form; robust_variance="centered" instead centers
the residual product before taking its second moment.
"""

from __future__ import annotations

import numpy as np

from . import inference, model_core
from .glm_lasso import cv_select, expit, expit2, make_problem
from .model_core import Dataset, DegenerateDenominatorError, NuisanceFit, xi_matrix
from .two_step import (STAGE_GAMMA1, STAGE_JOINT, DrFit, InitialFit,
                       TwoStepConfig, _coef_vector, _run_stage, stage_seed)

ROBUST_VARIANCE_KINDS = ("product_second_moment", "centered")


def _check_variance_kind(kind):
    if kind not in ROBUST_VARIANCE_KINDS:
        raise ValueError(f"robust_variance must be one of {ROBUST_VARIANCE_KINDS}")


def _joint_fit(data: Dataset, cfg: TwoStepConfig, loss: str):
    """Joint penalized fit of y on (z, x); returns (theta0, alpha1, lambda)."""
    design = np.column_stack([data.z, data.x])
    prob = make_problem(design, data.y, loss_kind=loss)
    cv = cv_select(prob, n_folds=cfg.n_folds,
                   seed=stage_seed(cfg.seed, STAGE_JOINT),
                   n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
    f = cv.fit_at_min
    theta0 = float(f.coefficients[0])
    alpha1 = np.concatenate([[f.intercept], f.coefficients[1:]])
    return theta0, alpha1, cv.lambda_min


def _gamma_projection(data: Dataset, cfg: TwoStepConfig, weights=None):
    """Penalized least squares of z on x; returns (gamma1, lambda)."""
    prob = make_problem(data.x, data.z, weights=weights, loss_kind="squared")
    cv = cv_select(prob, n_folds=cfg.n_folds,
                   seed=stage_seed(cfg.seed, STAGE_GAMMA1),
                   n_lambda=cfg.n_lambda, min_ratio=cfg.min_ratio, tol=cfg.tol)
    return _coef_vector(cv.fit_at_min), cv.lambda_min


def _ratio(num: float, den: float) -> float:
    if abs(den) < 1e-12:
        raise DegenerateDenominatorError("debiasing denominator is numerically zero")
    return num / den


def _product_variance(resid, zhat, hbar, robust_variance):
    prod = resid * zhat
    if robust_variance == "centered":
        prod = prod - prod.mean()
    return float(np.mean(prod * prod)) / hbar ** 2


def _assemble(data, theta_db, variance, alpha1, gamma1, theta0, lambdas, level):
    ci = inference.wald_interval(theta_db, variance, data.n, level=level)
    return DrFit(theta=float(theta_db), variance=float(variance),
                 ci_low=ci.low, ci_high=ci.high,
                 nuisance=NuisanceFit(alpha=alpha1, gamma=gamma1, stage="initial"),
                 method="debiased", theta0=float(theta0), lambdas=lambdas)


def debiased_linear(data: Dataset, cfg: TwoStepConfig, level: float = 0.95,
                    robust_variance: str = "product_second_moment",
                    initial: InitialFit | None = None) -> DrFit:
    """One-step debiased least-squares estimate of the z coefficient."""
    _check_variance_kind(robust_variance)
    lambdas = {}
    if initial is not None:
        theta0, alpha1 = initial.theta0, initial.alpha1
        lambdas["joint_initial"] = initial.lambdas.get("joint_initial")
    else:
        theta0, alpha1, lam1 = _run_stage(
            "joint_initial", lambda: _joint_fit(data, cfg, "squared"))
        lambdas["joint_initial"] = lam1
    gamma1, lam2 = _run_stage("gamma1", lambda: _gamma_projection(data, cfg))
    lambdas["gamma1"] = lam2

    xi = xi_matrix(data.x)
    y, z = data.y, data.z
    zhat = z - xi @ gamma1
    resid0 = y - theta0 * z - xi @ alpha1
    hbar = float(np.mean(z * zhat))
    theta_db = theta0 + _ratio(float(np.mean(resid0 * zhat)), hbar)
    if robust_variance == "centered":
        variance = _product_variance(resid0, zhat, hbar, "centered")
    else:
        resid = y - theta_db * z - xi @ alpha1
        variance = _product_variance(resid, zhat, hbar, "product_second_moment")
    return _assemble(data, theta_db, variance, alpha1, gamma1, theta0,
                     lambdas, level)


def debiased_loglinear(data: Dataset, cfg: TwoStepConfig, level: float = 0.95,
                       robust_variance: str = "product_second_moment",
                       initial: InitialFit | None = None) -> DrFit:
    """One-step debiased estimate for the log-linear outcome model."""
    _check_variance_kind(robust_variance)
    lambdas = {}
    if initial is not None:
        theta0, alpha1 = initial.theta0, initial.alpha1
        lambdas["joint_initial"] = initial.lambdas.get("joint_initial")
    else:
        theta0, alpha1, lam1 = _run_stage(
            "joint_initial", lambda: _joint_fit(data, cfg, "poisson"))
        lambdas["joint_initial"] = lam1

    xi = xi_matrix(data.x)
    y, z = data.y, data.z
    mean_model = model_core._checked_exp(theta0 * z + xi @ alpha1,
                                         "fitted log-linear mean")
    gamma1, lam2 = _run_stage(
        "gamma1", lambda: _gamma_projection(data, cfg, weights=mean_model))
    lambdas["gamma1"] = lam2

    zhat = z - xi @ gamma1
    resid = y - mean_model
    hbar = float(np.mean(mean_model * z * zhat))
    theta_db = theta0 + _ratio(float(np.mean(resid * zhat)), hbar)
    variance = _product_variance(resid, zhat, hbar, robust_variance)
    return _assemble(data, theta_db, variance, alpha1, gamma1, theta0,
                     lambdas, level)


def debiased_logistic(data: Dataset, cfg: TwoStepConfig, level: float = 0.95,
                      robust_variance: str = "product_second_moment",
                      initial: InitialFit | None = None) -> DrFit:
    """One-step debiased estimate for the logistic outcome model."""
    _check_variance_kind(robust_variance)
    lambdas = {}
    if initial is not None:
        theta0, alpha1 = initial.theta0, initial.alpha1
        lambdas["joint_initial"] = initial.lambdas.get("joint_initial")
    else:
        theta0, alpha1, lam1 = _run_stage(
            "joint_initial", lambda: _joint_fit(data, cfg, "logistic"))
        lambdas["joint_initial"] = lam1

    xi = xi_matrix(data.x)
    y, z = data.y, data.z
    eta = theta0 * z + xi @ alpha1
    curvature = expit2(eta)
    gamma1, lam2 = _run_stage(
        "gamma1", lambda: _gamma_projection(data, cfg, weights=curvature))
    lambdas["gamma1"] = lam2

    zhat = z - xi @ gamma1
    resid = y - expit(eta)
    hbar = float(np.mean(curvature * z * zhat))
    theta_db = theta0 + _ratio(float(np.mean(resid * zhat)), hbar)
    variance = _product_variance(resid, zhat, hbar, robust_variance)
    return _assemble(data, theta_db, variance, alpha1, gamma1, theta0,
                     lambdas, level)
