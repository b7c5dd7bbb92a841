"""Acceptance suite: ten numbered criteria, one pass/fail line each.

Criteria 6-8 are 200-replicate Monte Carlo runs and dominate the runtime
(roughly 5, 8, and 17 minutes respectively on one core); everything else
finishes in about three minutes combined.
"""

import math
import os

import numpy as np
import pytest

from drcal import datagen, debiased, glm_lasso as gl, harness, model_core as mc
from drcal import two_step
from drcal.datagen import RngStream
from drcal.glm_lasso import expit, fit_lasso, kkt_residual, lambda_path, \
    make_problem, soft_threshold
from drcal.harness import RunConfig, run_replications
from drcal.model_core import (Dataset, calibration_gradient_alpha,
                              calibration_gradient_gamma, family, solve_theta,
                              solve_theta_bisect, tau, xi_matrix)
from drcal.two_step import TwoStepConfig

MC_SEED = 1  # fixed seed for the desk-scale Monte Carlo criteria


def _report(num, desc, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {num}: {desc}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {num} failed: {desc} {detail}"


def _random_glm_problem(rng, loss_kind):
    n = 150 if loss_kind == "calibration_expit" else 60
    q = int(rng.integers(3, 10))
    X = rng.standard_normal((n, q))
    beta = np.zeros(q)
    k = min(3, q)
    scale = 0.4 if loss_kind == "calibration_expit" else 1.0
    beta[:k] = scale * rng.uniform(0.3, 1.2, k) * rng.choice([-1, 1], k)
    eta = 0.2 + X @ beta
    if loss_kind == "squared":
        y = eta + rng.standard_normal(n)
    elif loss_kind == "poisson":
        y = rng.poisson(np.exp(np.clip(eta, -5, 3))).astype(float)
    else:
        y = (rng.random(n) < expit(eta)).astype(float)
    w = rng.uniform(0.2, 2.0, n) if rng.random() < 0.5 else None
    return make_problem(X, y, weights=w, loss_kind=loss_kind)


def test_criterion_1_solver_kkt():
    rng = np.random.default_rng(100)
    worst = 0.0
    checked = 0
    for i in range(100):
        loss_kind = gl.LOSS_KINDS[i % 4]
        prob = _random_glm_problem(rng, loss_kind)
        grid = lambda_path(prob, n_lambda=12)
        lam = float(grid[4])
        fit = fit_lasso(prob, lam, tol=1e-12)
        if not fit.converged:  # separated exponential-loss draw; skip
            continue
        g = kkt_residual(prob, fit)
        pf = prob.penalty_factor
        active = fit.coefficients != 0
        r_active = np.abs(g[active] + lam * pf[active]
                          * np.sign(fit.coefficients[active]))
        r_inactive = np.abs(g[~active]) - lam * pf[~active]
        resid = max(r_active.max(initial=0.0), r_inactive.max(initial=0.0))
        worst = max(worst, resid)
        checked += 1
    ok_kkt = worst < 1e-5 and checked >= 95

    # orthonormal design closed form
    rng = np.random.default_rng(7)
    n, q = 64, 5
    Q, _ = np.linalg.qr(np.column_stack([np.ones(n),
                                         rng.standard_normal((n, q))]))
    X = Q[:, 1:] * np.sqrt(n)
    y = rng.standard_normal(n) + X @ np.array([1.0, -0.5, 0, 0.25, 0])
    lam = 0.25
    fit = fit_lasso(make_problem(X, y, standardize=False), lam, tol=1e-14)
    closed = np.array([soft_threshold(float(X[:, j] @ (y - y.mean())) / n, lam)
                       for j in range(q)])
    ok_ortho = np.max(np.abs(fit.coefficients - closed)) < 1e-8

    # lambda = 0 dense solve vs normal equations
    X = rng.standard_normal((200, 7))
    yy = X @ rng.standard_normal(7) + rng.standard_normal(200)
    f0 = fit_lasso(make_problem(X, yy), 0.0, tol=1e-14)
    A = np.column_stack([np.ones(200), X])
    coef = np.linalg.solve(A.T @ A, A.T @ yy)
    ok_ols = (abs(f0.intercept - coef[0]) < 1e-6
              and np.max(np.abs(f0.coefficients - coef[1:])) < 1e-6)

    _report(1, "solver KKT / orthonormal / lambda=0 oracles",
            ok_kkt and ok_ortho and ok_ols,
            f"worst KKT resid {worst:.2e} over {checked} problems")


def _theta_fixture(kind, seed, n=150, p=4):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = (rng.random(n) < expit(0.4 * x[:, 0] - 0.2 * x[:, 1])).astype(float)
    if kind == "pl":
        y = 1.5 * z + x[:, 0] + rng.standard_normal(n)
    elif kind == "pll":
        y = rng.poisson(np.exp(0.8 * z + 0.3 * x[:, 0])).astype(float)
    elif kind == "plogit":
        y = (rng.random(n) < expit(0.7 * z + 0.5 * x[:, 1])).astype(float)
    else:
        y = np.where(z == 1, x[:, 0] + rng.standard_normal(n), np.nan)
    alpha = np.concatenate([[0.1], rng.normal(0, 0.3, p)])
    gamma = np.concatenate([[-0.1], rng.normal(0, 0.3, p)])
    return Dataset(y=y, z=z, x=x), alpha, gamma


def test_criterion_2_theta_solvers():
    worst_mean = 0.0
    worst_gap = 0.0
    for i in range(50):
        kind = mc.FAMILY_KINDS[i % 4]
        data, alpha, gamma = _theta_fixture(kind, 1000 + i)
        fam = family(kind)
        theta = solve_theta(fam, data, alpha, gamma)
        xi = xi_matrix(data.x)
        m = abs(float(np.mean(tau(fam, data.y, data.z, xi, theta, alpha, gamma))))
        worst_mean = max(worst_mean, m)
        if kind in ("pll", "plogit"):
            b = solve_theta_bisect(fam, data, alpha, gamma)
            worst_gap = max(worst_gap, abs(theta - b))
    _report(2, "closed-form theta solvers zero the estimating equation",
            worst_mean < 1e-10 and worst_gap < 1e-8,
            f"max |mean tau| {worst_mean:.2e}, max bisection gap {worst_gap:.2e}")


def _pl_dataset(seed, n=150, p=12, theta=2.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = (rng.random(n) < expit(0.4 * x[:, 0] - 0.3 * x[:, 1])).astype(float)
    y = theta * z + x[:, 0] + 0.7 * x[:, 1] + rng.standard_normal(n)
    return Dataset(y=y, z=z, x=x)


def test_criterion_3_shared_lambda_identity():
    fam = family("pl", psi_f="identity")
    worst = 0.0
    for seed in range(20):
        data = _pl_dataset(2000 + seed)
        cfg = TwoStepConfig(seed=seed, share_lambda_initial=True, tol=1e-14)
        init = two_step.initial_estimate(data, fam, cfg)
        _, _, theta2, _ = two_step.calibrated_estimate(
            data, fam, init.theta1, init.alpha1, cfg, gamma1=init.gamma1,
            theta0=init.theta0, lambda_initial=init.lambdas["joint_initial"])
        db = debiased.debiased_linear(data, cfg, initial=init)
        worst = max(worst, abs(theta2 - db.theta))
    _report(3, "two-step equals debiased under a shared lambda (PL, identity link)",
            worst < 1e-8, f"max |theta2 - theta_db| {worst:.2e}")


def test_criterion_4_unpenalized_joint_ols_identity():
    rng = np.random.default_rng(42)
    worst = 0.0
    fam = family("pl", psi_f="identity")
    for _ in range(10):
        n, p = 300, 8
        x = rng.standard_normal((n, p))
        z = (rng.random(n) < expit(0.5 * x[:, 0])).astype(float)
        y = 1.2 * z + x @ rng.normal(0, 0.5, p) + rng.standard_normal(n)
        data = Dataset(y=y, z=z, x=x)
        # unpenalized fits: gamma from z ~ x, alpha from y ~ x with offset
        gfit = fit_lasso(make_problem(x, z), 0.0, tol=1e-14)
        gamma = np.concatenate([[gfit.intercept], gfit.coefficients])
        afit = fit_lasso(make_problem(x, y), 0.0, tol=1e-14)
        alpha = np.concatenate([[afit.intercept], afit.coefficients])
        theta = solve_theta(fam, data, alpha, gamma)
        A = np.column_stack([np.ones(n), z, x])
        coef = np.linalg.solve(A.T @ A, A.T @ y)
        worst = max(worst, abs(theta - coef[1]))
    _report(4, "lambda=0 plug-in theta equals the joint-OLS z coefficient",
            worst < 1e-8, f"max gap {worst:.2e}")


def _fd_gradient(f, c, h=1e-6):
    g = np.zeros_like(c)
    for j in range(len(c)):
        cp, cm = c.copy(), c.copy()
        cp[j] += h
        cm[j] -= h
        g[j] = (f(cp) - f(cm)) / (2 * h)
    return g


def test_criterion_5_calibration_gradient_oracle():
    worst = 0.0
    for i, kind in enumerate(mc.FAMILY_KINDS * 3):
        data, alpha, gamma = _theta_fixture(kind, 3000 + i, n=80, p=3)
        fam = family(kind)
        theta = 0.4

        l2 = mc.build_l2_problem(fam, data, theta, alpha)
        W2 = float(l2.weights.sum())
        fd = _fd_gradient(lambda c: gl.objective_value(l2, c[0], c[1:], 0.0)
                          * W2 / data.n, gamma.copy())
        an = calibration_gradient_alpha(fam, data, theta, alpha, gamma)
        worst = max(worst, float(np.max(np.abs(fd - an)
                                        / np.maximum(np.abs(an), 1e-3))))

        l1 = mc.build_l1_problem(fam, data, theta, gamma)
        W1 = float(l1.weights.sum())
        fd1 = _fd_gradient(lambda c: gl.objective_value(l1, c[0], c[1:], 0.0)
                           * W1 / data.n, alpha.copy())
        an1 = calibration_gradient_gamma(fam, data, theta, alpha, gamma)
        worst = max(worst, float(np.max(np.abs(fd1 - an1)
                                        / np.maximum(np.abs(an1), 1e-3))))
    _report(5, "loss gradients match the calibration estimating equations",
            worst < 1e-5, f"worst relative error {worst:.2e}")


def _mc_rows(setting, n, p, estimators, reps=200):
    cfg = RunConfig(setting=setting, n=n, p=p, reps=reps, seed=MC_SEED,
                    estimators=estimators)
    res = run_replications(cfg)
    return {r.estimator: r for r in res.rows}


def test_criterion_6_c1_two_step_table():
    row = _mc_rows("C1", 400, 100, ("two_step",))["two_step"]
    ok = (-0.03 <= row.bias <= 0.03 and 0.04 <= row.sd <= 0.08
          and 0.90 <= row.cov95 <= 0.98)
    _report(6, "C1 desk-scale two-step bias/sd/coverage",
            ok, f"bias {row.bias:.4f}, sd {row.sd:.4f}, cov95 {row.cov95:.3f}")


def test_criterion_7_c3_misspecification_contrast():
    rows = _mc_rows("C3", 400, 100, ("db", "two_step"))
    db, ts = rows["db"], rows["two_step"]
    ok = (db.bias >= 0.05 and abs(ts.bias) <= 0.05 and ts.cov95 >= 0.90)
    _report(7, "C3 misspecification contrast (debiased biased, two-step not)",
            ok, f"db bias {db.bias:.4f}, two-step bias {ts.bias:.4f}, "
            f"two-step cov95 {ts.cov95:.3f}")


def test_criterion_8_c6_loglinear_contrast():
    rows = _mc_rows("C6", 600, 100, ("db", "two_step"))
    db, ts = rows["db"], rows["two_step"]
    ok = (db.bias <= -0.01 and abs(ts.bias) <= 0.03 and ts.cov95 >= 0.90)
    _report(8, "C6 log-linear contrast (debiased biased down, two-step not)",
            ok, f"db bias {db.bias:.4f}, two-step bias {ts.bias:.4f}, "
            f"two-step cov95 {ts.cov95:.3f}")


def test_criterion_9_datagen_oracles():
    # intercept reference values
    p = 100
    mu1 = datagen._padded(datagen.MU1_LINEAR, p)
    b0, b1 = datagen.discriminant_logit_linear(np.zeros(p), mu1, np.eye(p), 0.5)
    ok_b0 = abs(b0 - (-0.4297)) < 5e-5
    mu1q = datagen._padded(datagen.MU1_QUAD, p)
    b0q, _, _ = datagen.discriminant_logit_quadratic(
        np.zeros(p), mu1q, np.eye(p), 0.5 * np.eye(p), 0.5)
    ok_b0q = abs(b0q - (-0.46875 + p / 2 * math.log(2))) < 5e-5

    # Bayes-posterior equivalence at 1e6 samples: the empirical z rate must
    # match the mean closed-form propensity to 3 standard errors
    st = datagen.setting("C1", 1_000_000, 5)
    data = datagen.gen_setting(st, RngStream(0, 1))
    pr = datagen.propensity(st, data.x)
    se = math.sqrt(float(np.mean(pr * (1 - pr))) / st.n)
    ok_bayes = abs(float(np.mean(data.z) - np.mean(pr))) <= 3 * se
    st2 = datagen.setting("C2", 1_000_000, 4)
    data2 = datagen.gen_setting(st2, RngStream(0, 1))
    pr2 = datagen.propensity(st2, data2.x)
    se2 = math.sqrt(float(np.mean(pr2 * (1 - pr2))) / st2.n)
    ok_bayes2 = abs(float(np.mean(data2.z) - np.mean(pr2))) <= 3 * se2

    # odds-ratio conditional identities on random x
    rng = np.random.default_rng(9)
    ok_odds = True
    for _ in range(50):
        x = rng.standard_normal(4)
        t, bb1, bb2 = rng.normal(0, 1), rng.normal(0, 0.5), rng.normal(0, 0.5)
        h1 = lambda v: 0.3 * v[0] - 0.2 * v[1]
        h2 = lambda v: 0.1 * v[2] + 0.4 * v[3]
        c = datagen.odds_ratio_cell_probs(x, t, bb1, bb2, h1, h2)
        p_y1_z1 = c[3] / (c[1] + c[3])
        p_y1_z0 = c[2] / (c[0] + c[2])
        p_z1_y0 = c[1] / (c[0] + c[1])
        ok_odds &= abs(p_y1_z1 - expit(t + bb2 + h2(x))) < 1e-12
        ok_odds &= abs(p_y1_z0 - expit(bb2 + h2(x))) < 1e-12
        ok_odds &= abs(p_z1_y0 - expit(bb1 + h1(x))) < 1e-12

    _report(9, "data-generation oracles (intercepts, Bayes posterior, odds table)",
            ok_b0 and ok_b0q and ok_bayes and ok_bayes2 and bool(ok_odds),
            f"b0 {b0:.5f}, b0_quad {b0q:.5f}")


def test_criterion_10_worker_count_determinism(tmp_path):
    cfg = dict(setting="C1", n=100, p=6, reps=4, seed=3,
               estimators=("two_step",))
    old = os.environ.get("DRCAL_THREADS")
    try:
        os.environ["DRCAL_THREADS"] = "1"
        run_replications(RunConfig(out_dir=str(tmp_path / "w1"), **cfg))
        os.environ["DRCAL_THREADS"] = "4"
        run_replications(RunConfig(out_dir=str(tmp_path / "w4"), **cfg))
        os.environ["DRCAL_THREADS"] = "1"
        run_replications(RunConfig(out_dir=str(tmp_path / "again"), **cfg))
    finally:
        if old is None:
            os.environ.pop("DRCAL_THREADS", None)
        else:
            os.environ["DRCAL_THREADS"] = old
    b1 = (tmp_path / "w1" / "summary.csv").read_bytes()
    b4 = (tmp_path / "w4" / "summary.csv").read_bytes()
    b2 = (tmp_path / "again" / "summary.csv").read_bytes()
    q1 = (tmp_path / "w1" / "qq_two_step.csv").read_bytes()
    q4 = (tmp_path / "w4" / "qq_two_step.csv").read_bytes()
    _report(10, "byte-identical outputs across reruns and worker counts",
            b1 == b4 == b2 and q1 == q4)
