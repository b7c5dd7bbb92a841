"""Regularized calibrated estimation for doubly robust semiparametric inference."""

__version__ = "0.1.0"

from .datagen import (RngStream, Setting, discriminant_logit_linear,
                      discriminant_logit_quadratic, gen_setting,
                      odds_ratio_cell_probs, setting)
from .debiased import debiased_linear, debiased_logistic, debiased_loglinear
from .glm_lasso import (CvResult, GlmProblem, LassoFit, cv_select, fit_lasso,
                        kkt_residual, lambda_path, lasso_path, make_problem,
                        soft_threshold)
from .harness import (QqRecord, RunConfig, SummaryRow, emit_outputs, load_csv,
                      run_replications, summarize)
from .inference import (IntervalEstimate, normal_cdf, normal_quantile,
                        sandwich_variance, t_statistic, wald_interval)
from .model_core import (Dataset, Family, NuisanceFit, build_l1_problem,
                         build_l2_problem, dtau_dtheta, family, solve_theta,
                         solve_theta_bisect, tau, xi_matrix)
from .two_step import (DrFit, InitialFit, TwoStepConfig, calibrated_estimate,
                       initial_estimate, initial_fit_summary, run_two_step)

__all__ = [
    "__version__",
    # glm_lasso
    "GlmProblem", "LassoFit", "CvResult", "make_problem", "soft_threshold",
    "lambda_path", "fit_lasso", "lasso_path", "cv_select", "kkt_residual",
    # model_core
    "Dataset", "Family", "NuisanceFit", "family", "xi_matrix", "tau",
    "dtau_dtheta", "solve_theta", "solve_theta_bisect",
    "build_l1_problem", "build_l2_problem",
    # two_step / debiased
    "TwoStepConfig", "DrFit", "InitialFit", "initial_estimate",
    "calibrated_estimate", "initial_fit_summary", "run_two_step",
    "debiased_linear", "debiased_loglinear", "debiased_logistic",
    # inference
    "IntervalEstimate", "normal_cdf", "normal_quantile", "sandwich_variance",
    "wald_interval", "t_statistic",
    # datagen
    "Setting", "RngStream", "setting", "gen_setting",
    "discriminant_logit_linear", "discriminant_logit_quadratic",
    "odds_ratio_cell_probs",
    # harness
    "RunConfig", "SummaryRow", "QqRecord", "run_replications", "summarize",
    "load_csv", "emit_outputs",
]
