"""L1-penalized weighted generalized linear regression.

Solves problems of the form

    (1/W) * sum_i w_i * loss(eta_i, y_i) + lambda * sum_j pf_j * |beta_j|

with eta = intercept + offset + design @ beta and W = sum_i w_i, by
coordinate descent (squared loss) or IRLS with an inner weighted-least-squares
coordinate descent (logistic, poisson, calibration_expit).  The intercept is
never penalized.  Penalized columns are standardized to unit weighted variance
internally by default and coefficients are mapped back to the original scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import wls_cd

LOSS_KINDS = ("squared", "logistic", "poisson", "calibration_expit")

ETA_CLAMP = 30.0
ETA_OVERFLOW = 250.0
ETA_DIVERGE = 100.0
WORK_WEIGHT_FLOOR = 1e-5


class InvalidProblemError(ValueError):
    """Raised for structurally invalid GLM problems."""


class NumericOverflowError(FloatingPointError):
    """Raised when the linear predictor diverges during a solve."""


def expit(c):
    c = np.asarray(c, dtype=np.float64)
    out = np.empty_like(c)
    pos = c >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-c[pos]))
    e = np.exp(c[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def expit2(c):
    """expit(c) * (1 - expit(c))."""
    p = expit(c)
    return p * (1.0 - p)


def log1pexp(c):
    c = np.asarray(c, dtype=np.float64)
    return np.maximum(c, 0.0) + np.log1p(np.exp(-np.abs(c)))


def soft_threshold(z: float, t: float) -> float:
    """Return sign(z) * max(|z| - t, 0).  Requires t >= 0."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@dataclass(frozen=True)
class GlmProblem:
    """A weighted, offset GLM problem with an L1 penalty on the columns.

    design: (n, q) matrix of penalized regressors (intercept handled by the
        solver, never part of the design); response, weights, offset: length-n
        vectors; loss_kind: one of LOSS_KINDS; penalty_factor: per-column
        multipliers of lambda (0 leaves a column unpenalized).
    """

    design: np.ndarray
    response: np.ndarray
    weights: np.ndarray
    offset: np.ndarray
    loss_kind: str
    penalty_factor: np.ndarray
    standardize: bool = True

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.design, dtype=np.float64))
        y = np.asarray(self.response, dtype=np.float64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        off = np.asarray(self.offset, dtype=np.float64).ravel()
        pf = np.asarray(self.penalty_factor, dtype=np.float64).ravel()
        n, q = d.shape
        if y.shape[0] != n or w.shape[0] != n or off.shape[0] != n:
            raise InvalidProblemError("design, response, weights, offset must share n rows")
        if pf.shape[0] != q:
            raise InvalidProblemError("penalty_factor must have one entry per design column")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidProblemError(f"unknown loss_kind {self.loss_kind!r}")
        if not np.all(np.isfinite(d)):
            raise InvalidProblemError("non-finite values in design")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidProblemError("weights must be finite and nonnegative")
        if not np.all(w.sum() > 0):
            raise InvalidProblemError("at least one weight must be positive")
        if not np.all(np.isfinite(off)):
            raise InvalidProblemError("non-finite values in offset")
        if np.any(pf < 0):
            raise InvalidProblemError("penalty factors must be nonnegative")
        object.__setattr__(self, "design", np.ascontiguousarray(d))
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "penalty_factor", pf)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def q(self) -> int:
        return self.design.shape[1]


def make_problem(design, response, weights=None, offset=None, loss_kind="squared",
                 penalty_factor=None, standardize=True) -> GlmProblem:
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    n, q = design.shape
    if weights is None:
        weights = np.ones(n)
    if offset is None:
        offset = np.zeros(n)
    if penalty_factor is None:
        penalty_factor = np.ones(q)
    return GlmProblem(design, response, weights, offset, loss_kind,
                      penalty_factor, standardize)


@dataclass(frozen=True)
class LassoFit:
    intercept: float
    coefficients: np.ndarray
    lam: float
    objective: float
    n_iterations: int
    converged: bool


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    fit_at_min: LassoFit
    fold_assignment: np.ndarray


# ---------------------------------------------------------------------------
# loss primitives


def _loss(kind, eta, y):
    if kind == "squared":
        return 0.5 * (y - eta) ** 2
    if kind == "logistic":
        return -y * eta + log1pexp(eta)
    if kind == "poisson":
        return -y * eta + np.exp(np.minimum(eta, 700.0))
    if kind == "calibration_expit":
        return y * np.exp(np.minimum(-eta, 700.0)) + (1.0 - y) * eta
    raise InvalidProblemError(kind)


def _dloss(kind, eta, y):
    if kind == "squared":
        return eta - y
    if kind == "logistic":
        return expit(eta) - y
    if kind == "poisson":
        return np.exp(np.minimum(eta, 700.0)) - y
    if kind == "calibration_expit":
        return -y * np.exp(np.minimum(-eta, 700.0)) + (1.0 - y)
    raise InvalidProblemError(kind)


def _d2loss(kind, eta, y):
    if kind == "squared":
        return np.ones_like(eta)
    if kind == "logistic":
        return expit2(eta)
    if kind == "poisson":
        return np.exp(np.minimum(eta, 700.0))
    if kind == "calibration_expit":
        return y * np.exp(np.minimum(-eta, 700.0))
    raise InvalidProblemError(kind)


def objective_value(problem: GlmProblem, intercept: float, coefficients, lam: float) -> float:
    """Penalized objective at (intercept, coefficients)."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    eta = intercept + problem.offset + problem.design @ coefficients
    w = problem.weights
    loss = float(w @ _loss(problem.loss_kind, eta, problem.response)) / float(w.sum())
    return loss + lam * float(problem.penalty_factor @ np.abs(coefficients))


# ---------------------------------------------------------------------------
# internal prepared state


class _Prepared:
    __slots__ = ("problem", "Xs", "wn", "mean", "scale")

    def __init__(self, problem: GlmProblem):
        self.problem = problem
        w = problem.weights
        wn = w / w.sum()
        self.wn = wn
        X = problem.design
        if problem.standardize:
            mean = wn @ X
            Xc = X - mean
            var = wn @ (Xc * Xc)
            scale = np.sqrt(var)
            scale[scale < 1e-12] = 1.0
            self.Xs = np.ascontiguousarray(Xc / scale)
            self.mean = mean
            self.scale = scale
        else:
            self.Xs = X
            self.mean = np.zeros(problem.q)
            self.scale = np.ones(problem.q)

    def to_internal(self, intercept, coefficients):
        beta = coefficients * self.scale
        b0 = intercept + float(coefficients @ self.mean)
        return b0, beta

    def to_original(self, b0, beta):
        coefficients = beta / self.scale
        intercept = b0 - float(coefficients @ self.mean)
        return intercept, coefficients


def _prepare(problem: GlmProblem) -> _Prepared:
    return _Prepared(problem)


def _solve(prep: _Prepared, lam: float, b0: float, beta: np.ndarray,
           tol: float, max_iter: int):
    """Solve at a single lambda on the internal scale.  Mutates beta."""
    pr = prep.problem
    kind = pr.loss_kind
    lam_pf = lam * pr.penalty_factor
    if kind == "squared":
        omega = prep.wn
        zeta = pr.response - pr.offset
        b0, sweeps, converged = wls_cd(prep.Xs, omega, zeta, beta, b0,
                                       lam_pf, tol, max_iter)
        return b0, beta, sweeps, converged

    y = pr.response

    def internal_objective(b0_, beta_):
        eta_ = b0_ + prep.Xs @ beta_ + pr.offset
        return (float(prep.wn @ _loss(kind, eta_, y))
                + lam * float(pr.penalty_factor @ np.abs(beta_)))

    total_sweeps = 0
    converged = False
    obj = internal_objective(b0, beta)
    for _ in range(100):
        eta_lin = b0 + prep.Xs @ beta
        eta = eta_lin + pr.offset
        if kind == "poisson" and np.any(np.abs(eta) > ETA_OVERFLOW):
            i = int(np.argmax(np.abs(eta)))
            raise NumericOverflowError(
                f"poisson linear predictor diverged at observation {i} (eta={eta[i]:.3g})")
        if np.max(np.abs(eta_lin)) > ETA_DIVERGE:
            # Separated problem at this lambda: the unpenalized optimum sits
            # at infinity.  Stop growing and report non-convergence.
            converged = False
            break
        etac = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
        l1 = _dloss(kind, etac, y)
        l2 = np.maximum(_d2loss(kind, etac, y), WORK_WEIGHT_FLOOR)
        omega = prep.wn * l2
        zeta = eta_lin - l1 / l2
        beta_prev = beta.copy()
        b0_prev = b0
        b0, sweeps, inner_conv = wls_cd(prep.Xs, omega, zeta, beta, b0,
                                        lam_pf, tol, max_iter)
        total_sweeps += sweeps
        # Step-halving: near-linear losses (floored curvature) can make the
        # working-response step overshoot; damp until the objective decreases.
        new_obj = internal_objective(b0, beta)
        step = 1.0
        while new_obj > obj + 1e-14 * (1.0 + abs(obj)) and step > 1e-10:
            step *= 0.5
            beta = beta_prev + step * (beta - beta_prev)
            b0 = b0_prev + step * (b0 - b0_prev)
            new_obj = internal_objective(b0, beta)
        d = beta - beta_prev
        chg = max(float(np.max(d * d)) if d.size else 0.0, (b0 - b0_prev) ** 2)
        obj_drop = obj - new_obj
        obj = new_obj
        if chg < tol or (0.0 <= obj_drop < 1e-15 * (1.0 + abs(obj))):
            converged = inner_conv
            break
    return b0, beta, total_sweeps, converged


def _null_state(prep: _Prepared, tol=1e-10, max_iter=10000):
    """Solve with all penalized coefficients forced to zero (unpenalized
    columns, if any, remain free)."""
    beta = np.zeros(prep.problem.q)
    huge = 1e18
    return _solve(prep, huge, 0.0, beta, tol, max_iter)[:2]


def lambda_path(problem: GlmProblem, n_lambda: int = 100, min_ratio: float | None = None):
    """Log-spaced grid from lambda_max down to lambda_max * min_ratio."""
    if n_lambda < 2:
        raise ValueError("n_lambda must be >= 2")
    if problem.weights.sum() <= 0:
        raise InvalidProblemError("all-zero weights")
    if min_ratio is None:
        min_ratio = 1e-2 if problem.q >= problem.n else 1e-4
    if not 0 < min_ratio < 1:
        raise ValueError("min_ratio must be in (0, 1)")
    prep = _prepare(problem)
    lam_max = _lambda_max(prep)
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def _lambda_max(prep: _Prepared) -> float:
    pr = prep.problem
    b0, beta = _null_state(prep)
    eta = b0 + pr.offset + prep.Xs @ beta
    g = (prep.wn * _dloss(pr.loss_kind, np.clip(eta, -ETA_CLAMP, ETA_CLAMP),
                          pr.response)) @ prep.Xs
    pf = pr.penalty_factor
    pen = pf > 0
    if not np.any(pen):
        raise InvalidProblemError("no penalized columns; lambda grid undefined")
    lam_max = float(np.max(np.abs(g[pen]) / pf[pen]))
    return max(lam_max, 1e-12)


def fit_lasso(problem: GlmProblem, lam: float, warm_start: LassoFit | None = None,
              tol: float = 1e-7, max_iter: int = 100000) -> LassoFit:
    """Fit the penalized problem at a single lambda."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    prep = _prepare(problem)
    return _fit_prepared(prep, lam, warm_start, tol, max_iter)


def _fit_prepared(prep: _Prepared, lam, warm_start, tol, max_iter) -> LassoFit:
    if warm_start is not None:
        b0, beta = prep.to_internal(warm_start.intercept,
                                    np.array(warm_start.coefficients, dtype=np.float64))
    else:
        b0, beta = 0.0, np.zeros(prep.problem.q)
    b0, beta, sweeps, converged = _solve(prep, lam, b0, beta, tol, max_iter)
    intercept, coefficients = prep.to_original(b0, beta)
    obj = objective_value(prep.problem, intercept, coefficients, lam)
    return LassoFit(intercept=float(intercept), coefficients=coefficients,
                    lam=float(lam), objective=float(obj),
                    n_iterations=int(sweeps), converged=bool(converged))


def lasso_path(problem: GlmProblem, lambdas, tol: float = 1e-7,
               max_iter: int = 100000) -> list[LassoFit]:
    """Warm-started fits along a descending lambda sequence."""
    prep = _prepare(problem)
    return _path_prepared(prep, np.asarray(lambdas, dtype=np.float64), tol, max_iter)


def _path_prepared(prep, lambdas, tol, max_iter) -> list[LassoFit]:
    fits = []
    prev = None
    for lam in lambdas:
        prev = _fit_prepared(prep, float(lam), prev, tol, max_iter)
        fits.append(prev)
        if not prev.converged and _diverged(prep, prev):
            # Smaller lambdas only diverge further; freeze the path here.
            fits.extend([prev] * (len(lambdas) - len(fits)))
            break
    return fits


def _diverged(prep: _Prepared, fit: LassoFit) -> bool:
    b0, beta = prep.to_internal(fit.intercept, np.asarray(fit.coefficients))
    return bool(np.max(np.abs(b0 + prep.Xs @ beta)) > ETA_DIVERGE)


def kkt_residual(problem: GlmProblem, fit: LassoFit) -> np.ndarray:
    """Gradient of the unpenalized (weight-normalized) loss at the fit.

    Reported on the internal standardized scale, i.e. the scale on which the
    penalty acts: |g_j + lam*pf_j*sign(beta_j)| <= tol on active coordinates
    and |g_j| <= lam*pf_j + tol elsewhere for a converged fit.
    """
    prep = _prepare(problem)
    eta = fit.intercept + problem.offset + problem.design @ fit.coefficients
    g = (prep.wn * _dloss(problem.loss_kind, eta, problem.response)) @ prep.Xs
    return g


def _held_out_measure(kind, measure, eta, y):
    if measure == "mse":
        return (y - eta) ** 2
    if measure == "deviance":
        dev = 2.0 * _loss(kind, eta, y)
        if kind == "poisson":
            with np.errstate(divide="ignore", invalid="ignore"):
                sat = np.where(y > 0, y * np.log(y) - y, 0.0)
            dev = dev - 2.0 * sat
        return dev
    raise ValueError(f"unknown measure {measure!r}")


def cv_select(problem: GlmProblem, n_folds: int = 5, seed: int = 0,
              measure: str | None = None, n_lambda: int = 100,
              min_ratio: float | None = None, tol: float = 1e-7,
              max_iter: int = 100000) -> CvResult:
    """K-fold cross-validated lambda selection along a shared grid.

    Fold assignment is a deterministic function of seed.  Ties in the CV
    curve resolve to the largest lambda.  The returned fit is refit on the
    full data with warm starts along the path.
    """
    n = problem.n
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if n < n_folds:
        raise ValueError("need n >= n_folds")
    if measure is None:
        measure = "mse" if problem.loss_kind == "squared" else "deviance"

    grid = lambda_path(problem, n_lambda=n_lambda, min_ratio=min_ratio)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_assignment = np.empty(n, dtype=np.int64)
    fold_assignment[perm] = np.arange(n) % n_folds

    w = problem.weights
    y = problem.response
    loss_sums = np.zeros((n_folds, len(grid)))
    weight_sums = np.zeros(n_folds)
    for k in range(n_folds):
        held = fold_assignment == k
        train_w = np.where(held, 0.0, w)
        if train_w.sum() <= 0:
            raise InvalidProblemError(f"fold {k} leaves no training weight")
        sub = replace(problem, weights=train_w)
        fits = _path_prepared(_prepare(sub), grid, tol, max_iter)
        Xh = problem.design[held]
        offh = problem.offset[held]
        wh = w[held]
        yh = y[held]
        weight_sums[k] = wh.sum()
        for i, f in enumerate(fits):
            eta = f.intercept + offh + Xh @ f.coefficients
            loss_sums[k, i] = wh @ _held_out_measure(problem.loss_kind, measure, eta, yh)

    total_w = weight_sums.sum()
    cv_mean = loss_sums.sum(axis=0) / total_w
    with np.errstate(invalid="ignore", divide="ignore"):
        fold_means = loss_sums / weight_sums[:, None]
    cv_se = fold_means.std(axis=0, ddof=1) / np.sqrt(n_folds)

    idx = int(np.argmin(cv_mean))  # grid is descending: first min = largest lambda
    full_fits = _path_prepared(_prepare(problem), grid[: idx + 1], tol, max_iter)
    return CvResult(lambda_grid=grid, cv_mean=cv_mean, cv_se=cv_se,
                    lambda_min=float(grid[idx]), fit_at_min=full_fits[idx],
                    fold_assignment=fold_assignment)
