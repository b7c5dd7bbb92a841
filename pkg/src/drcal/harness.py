"""Monte Carlo harness: seeded replications, aggregation, and flat-file output.

Replicates are embarrassingly parallel; every random draw is keyed by
(seed, replicate_index), and results are aggregated in replicate order, so
the emitted files are byte-identical regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, debiased, inference, model_core, two_step
from .datagen import RngStream, Setting
from .model_core import Dataset, family
from .two_step import TwoStepConfig

ESTIMATORS = ("db", "initial", "two_step")

# Extra stream tag for the per-replicate CV fold seed (data use tags 0-2).
TAG_CV = 3

_SETTING_FAMILY = {"C1": "pl", "C2": "pl", "C3": "pl",
                   "C4": "pll", "C5": "pll", "C6": "pll",
                   "C7": "plogit", "C8": "plogit", "C9": "plogit"}

_DEBIASED_FIT = {"pl": debiased.debiased_linear,
                 "pll": debiased.debiased_loglinear,
                 "plogit": debiased.debiased_logistic}


class ConfigError(ValueError):
    """Invalid run configuration."""


class CsvFormatError(ValueError):
    """Malformed input CSV; message names the offending row/column."""


@dataclass(frozen=True)
class RunConfig:
    setting: str  # "C1".."C9" or "csv"
    n: int = 0
    p: int = 0
    reps: int = 1
    seed: int = 0
    estimators: tuple = ("two_step",)
    n_folds: int = 5
    level: float = 0.95
    out_dir: str | None = None
    input_csv: str | None = None
    family: str | None = None
    theta_star: float | None = None
    supplement_variant: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must be in (0, 1)")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        if not self.estimators:
            raise ConfigError("at least one estimator required")
        if self.setting == "csv":
            if not self.input_csv or not self.family:
                raise ConfigError("csv mode requires input_csv and family")
        elif self.setting not in datagen.SETTING_IDS:
            raise ConfigError(f"unknown setting {self.setting!r}")


@dataclass(frozen=True)
class SummaryRow:
    setting: str
    n: int
    p: int
    estimator: str
    bias: float
    sd: float
    esd: float
    cov95: float
    reps_ok: int
    reps_failed: int


@dataclass(frozen=True)
class QqRecord:
    estimator: str
    normal_q: np.ndarray
    t: np.ndarray  # sorted ascending


@dataclass(frozen=True)
class RunResult:
    rows: list
    qq: list
    failure_fraction: float
    failures: list = field(default_factory=list)


def _cv_seed(seed: int, replicate_index: int) -> int:
    return int(np.random.SeedSequence([seed, replicate_index, TAG_CV])
               .generate_state(1)[0])


def _fit_one(cfg: RunConfig, r: int):
    """Fit all requested estimators on replicate r.

    Returns {estimator: (theta, variance) | error string}.  Top-level so it
    pickles for the process pool.
    """
    st = datagen.setting(cfg.setting, cfg.n, cfg.p,
                         theta_star=cfg.theta_star,
                         supplement_variant=cfg.supplement_variant)
    data = datagen.gen_setting(st, RngStream(cfg.seed, r))
    fam = family(_SETTING_FAMILY[cfg.setting])
    ts_cfg = TwoStepConfig(n_folds=cfg.n_folds, seed=_cv_seed(cfg.seed, r))

    out = {}
    init = None
    need_init = any(e in cfg.estimators for e in ("initial", "two_step", "db"))
    if need_init:
        try:
            init = two_step.initial_estimate(data, fam, ts_cfg)
        except Exception as e:  # noqa: BLE001 - recorded per replicate
            for e_name in cfg.estimators:
                out[e_name] = f"replicate {r}: {e}"
            return out

    for name in cfg.estimators:
        try:
            if name == "initial":
                fit = two_step.initial_fit_summary(data, fam, init,
                                                   level=cfg.level)
            elif name == "two_step":
                gamma2, alpha2, theta2, _ = two_step.calibrated_estimate(
                    data, fam, init.theta1, init.alpha1, ts_cfg,
                    gamma1=init.gamma1, theta0=init.theta0,
                    lambda_initial=init.lambdas.get("joint_initial"))
                variance = inference.sandwich_variance(fam, data, theta2,
                                                       alpha2, gamma2)
                out[name] = (float(theta2), float(variance))
                continue
            else:  # db
                fit = _DEBIASED_FIT[fam.kind](data, ts_cfg, level=cfg.level,
                                              initial=init)
            out[name] = (float(fit.theta), float(fit.variance))
        except Exception as e:  # noqa: BLE001 - recorded per replicate
            out[name] = f"replicate {r}: {e}"
    return out


def summarize(estimates, variances, theta_star, n, level=0.95,
              setting="", p=0, estimator="", reps_failed=0) -> SummaryRow:
    """Aggregate replicate estimates into one summary row."""
    estimates = np.asarray(estimates, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if estimates.size == 0:
        raise ValueError("no successful replicates to summarize")
    if estimates.shape != variances.shape:
        raise ValueError("estimates and variances must have equal length")
    m = estimates.size
    bias = float(estimates.mean() - theta_star)
    sd = float(estimates.std(ddof=1)) if m >= 2 else float("nan")
    esd = float(np.sqrt(np.mean(variances / n)))
    zc = inference.normal_quantile(1.0 - (1.0 - level) / 2.0)
    t = (estimates - theta_star) / np.sqrt(variances / n)
    cov95 = float(np.mean(np.abs(t) <= zc))
    return SummaryRow(setting=setting, n=int(n), p=int(p), estimator=estimator,
                      bias=bias, sd=sd, esd=esd, cov95=cov95,
                      reps_ok=int(m), reps_failed=int(reps_failed))


def _t_stats(estimates, variances, theta_star, n):
    estimates = np.asarray(estimates, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    return (estimates - theta_star) / np.sqrt(variances / n)


def run_replications(cfg: RunConfig) -> RunResult:
    """Run all replicates, aggregate, and (if out_dir set) emit files."""
    if cfg.setting == "csv":
        raise ConfigError("run_replications requires a simulation setting")
    st = datagen.setting(cfg.setting, cfg.n, cfg.p,
                         theta_star=cfg.theta_star,
                         supplement_variant=cfg.supplement_variant)
    if "db" in cfg.estimators and _SETTING_FAMILY[cfg.setting] not in _DEBIASED_FIT:
        raise ConfigError("no debiased estimator for this setting's family")

    workers = max(1, int(os.environ.get("DRCAL_THREADS", "1")))
    indices = list(range(1, cfg.reps + 1))
    if workers == 1:
        results = [_fit_one(cfg, r) for r in indices]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map preserves submission order, so aggregation is index-ordered
            results = list(pool.map(_fit_one, [cfg] * len(indices), indices))

    rows, qq, failures = [], [], []
    worst_failure_fraction = 0.0
    for name in cfg.estimators:
        thetas, variances = [], []
        n_failed = 0
        for res in results:
            val = res[name]
            if isinstance(val, str):
                failures.append(f"{name}: {val}")
                n_failed += 1
            else:
                thetas.append(val[0])
                variances.append(val[1])
        frac = n_failed / cfg.reps
        worst_failure_fraction = max(worst_failure_fraction, frac)
        if not thetas:
            rows.append(SummaryRow(setting=cfg.setting, n=cfg.n, p=cfg.p,
                                   estimator=name, bias=float("nan"),
                                   sd=float("nan"), esd=float("nan"),
                                   cov95=float("nan"), reps_ok=0,
                                   reps_failed=n_failed))
            continue
        row = summarize(thetas, variances, st.theta_star, cfg.n,
                        level=cfg.level, setting=cfg.setting, p=cfg.p,
                        estimator=name, reps_failed=n_failed)
        # Cross-check: interval-based coverage must agree with |t| <= z.
        zc = inference.normal_quantile(1.0 - (1.0 - cfg.level) / 2.0)
        half = zc * np.sqrt(np.asarray(variances) / cfg.n)
        th = np.asarray(thetas)
        cov_ci = float(np.mean((th - half <= st.theta_star)
                               & (st.theta_star <= th + half)))
        if abs(cov_ci - row.cov95) > 1e-12:
            raise AssertionError("coverage cross-check failed")
        rows.append(row)
        t = np.sort(_t_stats(thetas, variances, st.theta_star, cfg.n))
        m = t.size
        normal_q = np.array([inference.normal_quantile((i - 0.5) / m)
                             for i in range(1, m + 1)])
        qq.append(QqRecord(estimator=name, normal_q=normal_q, t=t))

    result = RunResult(rows=rows, qq=qq,
                       failure_fraction=worst_failure_fraction,
                       failures=failures)
    if cfg.out_dir is not None:
        emit_outputs(rows, qq, cfg.out_dir, meta=_run_meta(cfg))
    return result


def _run_meta(cfg: RunConfig) -> dict:
    from . import __version__
    meta = asdict(cfg)
    meta["estimators"] = list(cfg.estimators)
    meta["version"] = __version__
    return meta


def load_csv(path, fam) -> Dataset:
    """Read a dataset with header y,z,x1..xp (comma-separated, UTF-8)."""
    if isinstance(fam, str):
        fam = family(fam)
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = ["y", "z"] + [f"x{j}" for j in range(1, len(header) - 1)]
        if header != expected:
            raise CsvFormatError(
                f"{path}: header must be y,z,x1..xp (got {','.join(header)})")
        p = len(header) - 2
        if p < 1:
            raise CsvFormatError(f"{path}: need at least one x column")
        rows = []
        for i, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise CsvFormatError(
                    f"{path}: row {i} has {len(rec)} fields, expected {len(header)}")
            vals = []
            for col, cell in zip(header, rec):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}: row {i}, column {col!r}: "
                        f"non-numeric value {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    data = Dataset(y=arr[:, 0], z=arr[:, 1], x=arr[:, 2:])
    for i, zi in enumerate(data.z, start=2):
        if zi not in (0.0, 1.0):
            raise CsvFormatError(f"{path}: row {i}: z must be 0 or 1 (got {zi})")
    model_core.validate(data, fam)
    return data


def save_csv(path, data: Dataset) -> None:
    """Write a dataset in the load_csv format (full float precision)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "z"] + [f"x{j}" for j in range(1, data.p + 1)])
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i])), repr(float(data.z[i]))]
                            + [repr(float(v)) for v in data.x[i]])


def _fmt(v) -> str:
    return "%.6g" % float(v)


def emit_outputs(rows, qq, out_dir, meta=None) -> list:
    """Write summary.csv, qq_<estimator>.csv, and run_meta.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        spath = out / "summary.csv"
        with open(spath, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["setting", "n", "p", "estimator", "bias", "sd",
                             "esd", "cov95", "reps_ok", "reps_failed"])
            for row in rows:
                writer.writerow([row.setting, row.n, row.p, row.estimator,
                                 _fmt(row.bias), _fmt(row.sd), _fmt(row.esd),
                                 _fmt(row.cov95), row.reps_ok, row.reps_failed])
        written.append(spath)
        for rec in qq:
            qpath = out / f"qq_{rec.estimator}.csv"
            with open(qpath, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["normal_q", "t"])
                for nq, t in zip(rec.normal_q, rec.t):
                    writer.writerow([_fmt(nq), _fmt(t)])
            written.append(qpath)
        if meta is not None:
            mpath = out / "run_meta.json"
            with open(mpath, "w", encoding="utf-8") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(mpath)
        return written
    except OSError as e:
        raise OSError(f"failed writing outputs under {out}: {e}") from e
