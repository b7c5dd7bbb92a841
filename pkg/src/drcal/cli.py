"""Command-line interface.

drcal sim  — run a Monte Carlo simulation setting and write summary/QQ CSVs.
drcal fit  — fit an estimator to a CSV dataset and write fit.json.

Exit codes: 0 success, 2 configuration error, 3 more than 20% of replicates
failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, harness, two_step
from .datagen import SettingConfigError
from .harness import ConfigError, CsvFormatError, RunConfig
from .model_core import FAMILY_KINDS, family
from .two_step import TwoStepConfig

FAILURE_FRACTION_LIMIT = 0.2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drcal",
        description="Regularized calibrated estimation for doubly robust inference.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run a simulation setting")
    sim.add_argument("--setting", required=True, help="C1..C9")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--estimators", default="two_step",
                     help="comma-separated subset of db,initial,two_step")
    sim.add_argument("--folds", type=int, default=5)
    sim.add_argument("--level", type=float, default=0.95)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--theta-star", type=float, default=None,
                     help="override the setting's default true theta")
    sim.add_argument("--supplement-variant", action="store_true",
                     help="use the alternate C7-C9 parameterization")

    fit = sub.add_parser("fit", help="fit one estimator to a CSV dataset")
    fit.add_argument("--family", required=True, choices=FAMILY_KINDS)
    fit.add_argument("--input", required=True, help="CSV with header y,z,x1..xp")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="path for fit.json")
    fit.add_argument("--estimator", default="two_step",
                     choices=("two_step", "initial", "db"))
    fit.add_argument("--folds", type=int, default=5)
    fit.add_argument("--level", type=float, default=0.95)
    return parser


def _run_sim(args) -> int:
    estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    cfg = RunConfig(setting=args.setting, n=args.n, p=args.p, reps=args.reps,
                    seed=args.seed, estimators=estimators, n_folds=args.folds,
                    level=args.level, out_dir=args.out,
                    theta_star=args.theta_star,
                    supplement_variant=args.supplement_variant)
    result = harness.run_replications(cfg)
    for row in result.rows:
        print(f"{row.setting} {row.estimator}: bias={row.bias:.4g} "
              f"sd={row.sd:.4g} esd={row.esd:.4g} cov95={row.cov95:.4g} "
              f"ok={row.reps_ok} failed={row.reps_failed}")
    if result.failures:
        for msg in result.failures[:10]:
            print(f"warning: {msg}", file=sys.stderr)
    if result.failure_fraction > FAILURE_FRACTION_LIMIT:
        print(f"error: {result.failure_fraction:.0%} of replicates failed",
              file=sys.stderr)
        return 3
    return 0


def _nonzero_count(coef) -> int:
    # intercept excluded: count only the penalized x coordinates
    return int((coef[1:] != 0).sum())


def _run_fit(args) -> int:
    fam = family(args.family)
    data = harness.load_csv(args.input, fam)
    cfg = TwoStepConfig(n_folds=args.folds, seed=args.seed)
    if args.estimator == "two_step":
        fit = two_step.run_two_step(data, fam, cfg, level=args.level)
    elif args.estimator == "initial":
        init = two_step.initial_estimate(data, fam, cfg)
        fit = two_step.initial_fit_summary(data, fam, init, level=args.level)
    else:
        if fam.kind not in harness._DEBIASED_FIT:
            raise ConfigError(f"no debiased estimator for family {fam.kind!r}")
        fit = harness._DEBIASED_FIT[fam.kind](data, cfg, level=args.level)
    payload = {
        "theta": fit.theta,
        "variance": fit.variance,
        "ci_low": fit.ci_low,
        "ci_high": fit.ci_high,
        "level": args.level,
        "method": fit.method,
        "theta0": fit.theta0,
        "lambdas": fit.lambdas,
        "nonzero_alpha": _nonzero_count(fit.nuisance.alpha),
        "nonzero_gamma": _nonzero_count(fit.nuisance.gamma),
        "n": data.n,
        "p": data.p,
        "family": fam.kind,
        "version": __version__,
    }
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"theta={fit.theta:.6g} ci=[{fit.ci_low:.6g}, {fit.ci_high:.6g}] "
          f"-> {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "sim":
            return _run_sim(args)
        return _run_fit(args)
    except (ConfigError, CsvFormatError, SettingConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
