import numpy as np
import pytest

from drcal import glm_lasso as gl
from drcal.glm_lasso import (InvalidProblemError, NumericOverflowError,
                             cv_select, expit, fit_lasso, kkt_residual,
                             lambda_path, lasso_path, make_problem,
                             objective_value, soft_threshold)


def _random_problem(rng, loss_kind, n=60, q=8, weighted=False, offset=False):
    if loss_kind == "calibration_expit":
        # exponential-tailed loss separates easily; keep the signal mild
        n = max(n, 150)
    X = rng.standard_normal((n, q))
    beta = np.zeros(q)
    scale = 0.4 if loss_kind == "calibration_expit" else 1.0
    beta[: 3] = scale * rng.uniform(0.5, 1.5, 3) * rng.choice([-1, 1], 3)
    eta = 0.3 + X @ beta
    if loss_kind == "squared":
        y = eta + rng.standard_normal(n)
    elif loss_kind == "logistic":
        y = (rng.random(n) < expit(eta)).astype(float)
    elif loss_kind == "poisson":
        y = rng.poisson(np.exp(np.clip(eta, -5, 3))).astype(float)
    else:  # calibration_expit wants a binary response
        y = (rng.random(n) < expit(eta)).astype(float)
    w = rng.uniform(0.2, 2.0, n) if weighted else None
    off = 0.1 * rng.standard_normal(n) if offset else None
    return make_problem(X, y, weights=w, offset=off, loss_kind=loss_kind)


def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_problem_validation():
    X = np.ones((4, 2))
    with pytest.raises(InvalidProblemError):
        make_problem(X, np.ones(3))
    with pytest.raises(InvalidProblemError):
        make_problem(X, np.ones(4), weights=-np.ones(4))
    with pytest.raises(InvalidProblemError):
        make_problem(X, np.ones(4), loss_kind="huber")
    with pytest.raises(InvalidProblemError):
        make_problem(X, np.ones(4), penalty_factor=np.ones(3))
    with pytest.raises(InvalidProblemError):
        make_problem(X * np.nan, np.ones(4))


def test_orthonormal_soft_threshold_closed_form():
    # Columns centered with (1/n) X_j' X_j = 1 and mutually orthogonal:
    # the lasso solution is coordinatewise soft thresholding.
    rng = np.random.default_rng(3)
    n, q = 64, 5
    A = np.column_stack([np.ones(n), rng.standard_normal((n, q))])
    Q, _ = np.linalg.qr(A)
    X = Q[:, 1:] * np.sqrt(n)  # centered, mutually orthogonal, (1/n) X'X = I
    y = rng.standard_normal(n) + X @ np.array([1.0, -0.5, 0.0, 0.25, 0.0])
    lam = 0.3
    prob = make_problem(X, y, standardize=False)
    fit = fit_lasso(prob, lam, tol=1e-14)
    expected = np.array([soft_threshold(float(X[:, j] @ (y - y.mean())) / n, lam)
                         for j in range(q)])
    assert np.allclose(fit.coefficients, expected, atol=1e-8)
    assert abs(fit.intercept - y.mean()) < 1e-8


def test_lambda_zero_matches_normal_equations():
    rng = np.random.default_rng(11)
    n, q = 120, 6
    X = rng.standard_normal((n, q))
    y = X @ rng.standard_normal(q) + rng.standard_normal(n)
    fit = fit_lasso(make_problem(X, y), 0.0, tol=1e-14)
    A = np.column_stack([np.ones(n), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert abs(fit.intercept - coef[0]) < 1e-7
    assert np.allclose(fit.coefficients, coef[1:], atol=1e-7)


def test_lambda_zero_logistic_matches_newton_oracle():
    rng = np.random.default_rng(5)
    n, q = 200, 3
    X = rng.standard_normal((n, q))
    y = (rng.random(n) < expit(0.5 + X @ np.array([1.0, -1.0, 0.5]))).astype(float)
    fit = fit_lasso(make_problem(X, y, loss_kind="logistic"), 0.0, tol=1e-14)
    # damped Newton on the unpenalized log-likelihood
    A = np.column_stack([np.ones(n), X])
    b = np.zeros(q + 1)
    for _ in range(50):
        p = expit(A @ b)
        g = A.T @ (p - y) / n
        H = (A * (p * (1 - p))[:, None]).T @ A / n
        step = np.linalg.solve(H, g)
        b = b - step
        if np.max(np.abs(step)) < 1e-12:
            break
    assert abs(fit.intercept - b[0]) < 1e-6
    assert np.allclose(fit.coefficients, b[1:], atol=1e-6)


@pytest.mark.parametrize("loss_kind", gl.LOSS_KINDS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kkt_conditions(loss_kind, seed):
    rng = np.random.default_rng(seed)
    prob = _random_problem(rng, loss_kind, weighted=(seed == 1), offset=(seed == 2))
    grid = lambda_path(prob, n_lambda=20)
    lam = float(grid[6 if loss_kind == "calibration_expit" else 10])
    fit = fit_lasso(prob, lam, tol=1e-12)
    assert fit.converged
    g = kkt_residual(prob, fit)
    pf = prob.penalty_factor
    # map to the internal (standardized) sign; scale > 0 so signs agree
    active = fit.coefficients != 0
    assert np.all(np.abs(g[active] + lam * pf[active] * np.sign(fit.coefficients[active])) < 1e-6)
    assert np.all(np.abs(g[~active]) <= lam * pf[~active] + 1e-6)


def test_lambda_max_kills_all_coefficients():
    rng = np.random.default_rng(7)
    for loss_kind in gl.LOSS_KINDS:
        prob = _random_problem(rng, loss_kind)
        grid = lambda_path(prob)
        fit = fit_lasso(prob, float(grid[0]), tol=1e-12)
        assert np.allclose(fit.coefficients, 0.0, atol=1e-8), loss_kind
        # strictly below lambda_max something must enter
        fit2 = fit_lasso(prob, float(grid[0]) * 0.8, tol=1e-12)
        assert np.any(np.abs(fit2.coefficients) > 1e-6), loss_kind


def test_lambda_path_grid_shape():
    prob = _random_problem(np.random.default_rng(0), "squared", n=30, q=40)
    grid = lambda_path(prob, n_lambda=50)
    assert len(grid) == 50
    assert np.all(np.diff(grid) < 0)
    # q >= n uses the 1e-2 floor
    assert np.isclose(grid[-1] / grid[0], 1e-2)
    prob2 = _random_problem(np.random.default_rng(0), "squared", n=60, q=8)
    grid2 = lambda_path(prob2, n_lambda=50)
    assert np.isclose(grid2[-1] / grid2[0], 1e-4)


def test_warm_start_path_matches_cold_fits():
    rng = np.random.default_rng(13)
    prob = _random_problem(rng, "squared")
    grid = lambda_path(prob, n_lambda=12)
    path = lasso_path(prob, grid, tol=1e-13)
    for lam, f in zip(grid, path):
        cold = fit_lasso(prob, float(lam), tol=1e-13)
        assert np.allclose(f.coefficients, cold.coefficients, atol=1e-7)


def test_zero_weight_rows_are_inert():
    rng = np.random.default_rng(21)
    X = rng.standard_normal((50, 4))
    y = X @ np.array([1.0, 0, -1.0, 0]) + rng.standard_normal(50)
    w = np.ones(50)
    w[:10] = 0.0
    full = fit_lasso(make_problem(X, y, weights=w), 0.05, tol=1e-13)
    sub = fit_lasso(make_problem(X[10:], y[10:]), 0.05, tol=1e-13)
    assert np.allclose(full.coefficients, sub.coefficients, atol=1e-9)
    assert abs(full.intercept - sub.intercept) < 1e-9


def test_offset_equals_shifted_response_for_squared():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    off = rng.standard_normal(40)
    a = fit_lasso(make_problem(X, y, offset=off), 0.1, tol=1e-13)
    b = fit_lasso(make_problem(X, y - off), 0.1, tol=1e-13)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-10)
    assert abs(a.intercept - b.intercept) < 1e-10


def test_penalty_factor_zero_leaves_column_unpenalized():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((80, 4))
    y = 2.0 * X[:, 0] + rng.standard_normal(80)
    pf = np.array([0.0, 1.0, 1.0, 1.0])
    prob = make_problem(X, y, penalty_factor=pf)
    fit = fit_lasso(prob, 10.0, tol=1e-13)  # huge lambda
    assert np.all(fit.coefficients[1:] == 0.0)
    assert abs(fit.coefficients[0] - 2.0) < 0.5  # unshrunk, near truth


def test_poisson_overflow_raises():
    X = np.full((20, 1), 50.0)
    y = np.full(20, 1e6)
    prob = make_problem(X, y, loss_kind="poisson", standardize=False)
    with pytest.raises(NumericOverflowError):
        fit_lasso(prob, 1e-9, warm_start=gl.LassoFit(
            intercept=0.0, coefficients=np.array([10.0]), lam=0.0,
            objective=0.0, n_iterations=0, converged=True))


def test_objective_decreases_along_path():
    rng = np.random.default_rng(31)
    prob = _random_problem(rng, "logistic")
    grid = lambda_path(prob, n_lambda=15)
    path = lasso_path(prob, grid, tol=1e-10)
    objs = [objective_value(prob, f.intercept, f.coefficients, float(grid[-1]))
            for f in path]
    # at the common smallest lambda, later (less penalized) fits are at least as good
    assert objs[-1] <= objs[0] + 1e-12


class TestCvSelect:
    def test_deterministic_and_tie_break(self):
        rng = np.random.default_rng(2)
        prob = _random_problem(rng, "squared", n=50, q=6)
        a = cv_select(prob, seed=42)
        b = cv_select(prob, seed=42)
        assert np.array_equal(a.fold_assignment, b.fold_assignment)
        assert a.lambda_min == b.lambda_min
        assert np.array_equal(a.cv_mean, b.cv_mean)
        # lambda_min is a grid member and the fit is at that lambda
        assert a.lambda_min in a.lambda_grid
        assert a.fit_at_min.lam == a.lambda_min
        # argmin on the descending grid resolves ties to the largest lambda
        idx = int(np.argmin(a.cv_mean))
        assert a.lambda_min == a.lambda_grid[idx]

    def test_fold_assignment_balanced(self):
        prob = _random_problem(np.random.default_rng(4), "squared", n=53, q=4)
        res = cv_select(prob, n_folds=5, seed=0)
        counts = np.bincount(res.fold_assignment, minlength=5)
        assert counts.max() - counts.min() <= 1

    def test_seed_changes_folds(self):
        prob = _random_problem(np.random.default_rng(4), "squared", n=50, q=4)
        a = cv_select(prob, seed=0)
        b = cv_select(prob, seed=1)
        assert not np.array_equal(a.fold_assignment, b.fold_assignment)

    def test_validation(self):
        prob = _random_problem(np.random.default_rng(4), "squared", n=10, q=3)
        with pytest.raises(ValueError):
            cv_select(prob, n_folds=1)
        with pytest.raises(ValueError):
            cv_select(prob, n_folds=11)
