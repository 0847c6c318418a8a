"""Command line front end.

Subcommands: ``simulate | fit | cv | test | power | bench``. Every
subcommand accepts ``--config FILE`` with a JSON object holding the same
keys as the long flag names (dashes become underscores); explicit flags
override config values, which override the built-in defaults. ``--seed``
and ``--jobs`` are available everywhere, and the output directory defaults
to the ``COVGOF_OUTDIR`` environment variable, then the working directory.

Every output file carries the sha256 hash of the resolved configuration and
the master seed, so a result can always be traced back to an exact run
description. Commands exit 0 on success and nonzero with a single
``error: ...`` line on stderr otherwise. ``--paper-scale`` switches the
power/test defaults from the quick desk scale (100 datasets, M=200) to the
full study scale (500/500); explicitly given values always win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bench import BENCH_VARIANTS, benchmark_study
from .cv import cross_validate_lambda, default_grid
from .estimators import (
    fit_combined,
    fit_nonparametric,
    fit_parametric,
    fit_smoothed_parametric,
)
from .families import FAMILY_KINDS, ParametricFamily, reference_family
from .gof import STATISTIC_KINDS, gof_test, power_study, statistic_profile
from .kernels import clearance_only_kernel, maturation_kernel
from .pkmodel import load_dataset, save_dataset, scenario, scenario_names, simulate_dataset

ESTIMATORS = ("parametric", "nonparametric", "combined", "smoothed")

AGE_GRID = np.arange(0.0, 20.0 + 1e-9, 0.25)


class CliError(Exception):
    """A user-facing problem; message printed as a single error line."""

    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _outdir(cfg) -> Path:
    out = cfg.get("outdir") or os.environ.get("COVGOF_OUTDIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config_hash(cfg: dict) -> str:
    """Hash of the result-relevant configuration, for provenance stamps.

    Keys that change where or how fast results are produced, but never what
    they are, stay out of the hash so reruns remain byte-identical.
    """
    relevant = {k: v for k, v in cfg.items() if k not in ("outdir", "jobs", "resume")}
    return hashlib.sha256(
        json.dumps(relevant, sort_keys=True, default=str).encode()
    ).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _resolve(args, keys) -> dict:
    """Merge defaults, config file values and explicit flags for the keys."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", code=2)
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object", code=2)
        unknown = set(loaded) - set(keys)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}", code=2)
        cfg.update(loaded)
    for key, default in keys.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = flag_value
        elif key not in cfg:
            cfg[key] = default
    return cfg


def _comma_list(raw, allowed, what) -> list:
    items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
    items = [str(s).strip() for s in items if str(s).strip()]
    for item in items:
        if item not in allowed:
            raise CliError(f"unknown {what} {item!r}; choose from {', '.join(allowed)}", code=2)
    if not items:
        raise CliError(f"no {what} given", code=2)
    return items


def _scenario(name: str):
    if name not in scenario_names():
        raise CliError(
            f"unknown scenario {name!r}; choose from {', '.join(scenario_names())}",
            code=2,
        )
    return scenario(name)


def _true_family(cfg) -> ParametricFamily:
    kind = cfg.get("true_family", "saturable_exponential")
    tau = cfg.get("true_tau")
    if tau is None:
        if kind != "saturable_exponential":
            raise CliError("true_tau is required for a non-default true family", code=2)
        return reference_family()
    fam = ParametricFamily(kind, tuple(float(v) for v in tau))
    fam.validate()
    return fam


def _obtain_dataset(cfg):
    """A dataset either loaded from files or simulated on the fly."""
    if cfg.get("data"):
        try:
            return load_dataset(cfg["data"])
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot load dataset {cfg['data']}: {exc}")
    spec = _scenario(cfg["scenario"])
    if cfg.get("sigma") is not None:
        spec = dataclasses.replace(spec, sigma=float(cfg["sigma"]))
    return simulate_dataset(spec, _true_family(cfg), seed=int(cfg["seed"]))


def _parse_lambda(raw):
    """Either the string ``cv`` (select by cross-validation) or a number."""
    if raw is None or str(raw).lower() == "cv":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise CliError(f"lambda must be a number or 'cv', got {raw!r}", code=2)
    if value <= 0:
        raise CliError("lambda must be positive", code=2)
    return value


def _kernel_for(profile: str, bandwidth):
    make = maturation_kernel if profile == "nonparametric" else clearance_only_kernel
    return make() if bandwidth is None else make(float(bandwidth))


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = _resolve(args, {
        "scenario": "rich", "seed": 0, "outdir": None,
        "true_family": "saturable_exponential", "true_tau": None, "sigma": None,
    })
    spec = _scenario(cfg["scenario"])
    if cfg["sigma"] is not None:
        spec = dataclasses.replace(spec, sigma=float(cfg["sigma"]))
    ds = simulate_dataset(spec, _true_family(cfg), seed=int(cfg["seed"]))
    out = _outdir(cfg)
    base = out / f"dataset_{cfg['scenario']}_seed{cfg['seed']}"
    csv_path, json_path = save_dataset(ds, str(base))
    stamp = {"config_sha256": _config_hash(cfg), "master_seed": int(cfg["seed"])}
    with open(json_path) as fh:
        meta = json.load(fh)
    meta.update(stamp)
    _write_json(Path(json_path), meta)
    print(csv_path)
    print(json_path)
    return 0


# --------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    cfg = _resolve(args, {
        "estimator": "nonparametric", "family": "saturable_exponential",
        "data": None, "scenario": "rich", "seed": 0, "sigma": None,
        "true_family": "saturable_exponential", "true_tau": None,
        "lam": "cv", "bandwidth": None, "outdir": None, "jobs": 1,
    })
    if cfg["estimator"] not in ESTIMATORS:
        raise CliError(
            f"unknown estimator {cfg['estimator']!r}; choose from {', '.join(ESTIMATORS)}",
            code=2,
        )
    if cfg["family"] not in FAMILY_KINDS:
        raise CliError(f"unknown family {cfg['family']!r}", code=2)
    ds = _obtain_dataset(cfg)
    estimator = cfg["estimator"]
    lam = _parse_lambda(cfg["lam"])
    profile = "combined" if estimator == "combined" else "nonparametric"
    kernel = _kernel_for(profile, cfg["bandwidth"])

    if estimator != "parametric" and lam is None:
        lam = cross_validate_lambda(
            ds, estimator=profile, kernel=kernel,
            seed=int(cfg["seed"]), family_kind=cfg["family"],
        ).lam

    if estimator == "parametric":
        fit = fit_parametric(ds, cfg["family"])
    elif estimator == "nonparametric":
        fit = fit_nonparametric(ds, kernel, lam, init_family_kind=cfg["family"])
    elif estimator == "combined":
        fit = fit_combined(ds, cfg["family"], kernel, lam)
    else:
        base = fit_parametric(ds, cfg["family"])
        fit = fit_smoothed_parametric(ds, base, kernel, lam)

    out = _outdir(cfg)
    curve_path = out / f"clearance_curve_{estimator}.csv"
    cl = fit.theta_star(AGE_GRID)[:, 0]
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age_years", "cl_star"])
        for a, c in zip(AGE_GRID, cl):
            writer.writerow([repr(float(a)), repr(float(c))])

    report = {
        "estimator": estimator,
        "family_kind": cfg["family"],
        "lam": fit.lam,
        "objective": fit.objective,
        "stage_objectives": fit.stage_objectives,
        "degraded": fit.degraded,
        "tau_hat": None if fit.family is None else list(fit.family.tau),
        "gamma_hat": None if fit.rkhs is None else [float(g) for g in fit.rkhs.gamma],
        "config_sha256": _config_hash(cfg),
        "master_seed": int(cfg["seed"]),
    }
    report_path = out / f"fit_{estimator}.json"
    _write_json(report_path, report)
    print(curve_path)
    print(report_path)
    return 0


# ---------------------------------------------------------------------- cv

def cmd_cv(args) -> int:
    cfg = _resolve(args, {
        "estimator": "nonparametric", "family": "saturable_exponential",
        "data": None, "scenario": "rich", "seed": 0, "sigma": None,
        "true_family": "saturable_exponential", "true_tau": None,
        "grid": None, "folds": 5, "bandwidth": None, "outdir": None,
    })
    profile = "combined" if cfg["estimator"] == "combined" else "nonparametric"
    if cfg["estimator"] not in ("nonparametric", "combined"):
        raise CliError("estimator must be nonparametric or combined", code=2)
    ds = _obtain_dataset(cfg)
    kernel = _kernel_for(profile, cfg["bandwidth"])
    grid = None if cfg["grid"] is None else [float(g) for g in cfg["grid"]]
    res = cross_validate_lambda(
        ds, estimator=profile, kernel=kernel, grid=grid,
        k=int(cfg["folds"]), seed=int(cfg["seed"]), family_kind=cfg["family"],
    )
    out = _outdir(cfg)
    curve_path = out / "cv_curve.csv"
    ses = res.standard_errors()
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "mean_error", "se"])
        for lam, err, se in zip(res.grid, res.scores, ses):
            writer.writerow([repr(float(lam)), repr(float(err)), repr(float(se))])
    report_path = out / "cv.json"
    _write_json(report_path, {
        "selected_lambda": res.lam,
        "estimator": profile,
        "n_folds": res.n_folds,
        "config_sha256": _config_hash(cfg),
        "master_seed": int(cfg["seed"]),
    })
    print(curve_path)
    print(report_path)
    return 0


# -------------------------------------------------------------------- test

def cmd_test(args) -> int:
    cfg = _resolve(args, {
        "family": "saturable_exponential", "statistic": "T1",
        "data": None, "scenario": "rich", "seed": 0, "sigma": None,
        "true_family": "saturable_exponential", "true_tau": None,
        "lam": "cv", "M": None, "alpha": 0.05, "bandwidth": None,
        "outdir": None, "jobs": 1, "paper_scale": False,
    })
    if cfg["statistic"] not in STATISTIC_KINDS:
        raise CliError(f"unknown statistic {cfg['statistic']!r}", code=2)
    if cfg["family"] not in FAMILY_KINDS:
        raise CliError(f"unknown family {cfg['family']!r}", code=2)
    M = int(cfg["M"]) if cfg["M"] is not None else (500 if cfg["paper_scale"] else 200)
    ds = _obtain_dataset(cfg)
    kernel = _kernel_for(statistic_profile(cfg["statistic"]), cfg["bandwidth"])
    result = gof_test(
        ds, cfg["family"], kernel=kernel, lam=_parse_lambda(cfg["lam"]),
        kind=cfg["statistic"], M=M, alpha=float(cfg["alpha"]),
        master_seed=int(cfg["seed"]), jobs=int(cfg["jobs"]),
    )
    out = _outdir(cfg)
    path = out / f"test_{cfg['statistic']}_{cfg['family']}.json"
    _write_json(path, {
        "kind": result.kind,
        "family_kind": result.family_kind,
        "observed": result.observed,
        "critical_value": result.critical_value,
        "p_value": result.p_value,
        "reject": result.reject,
        "alpha": result.alpha,
        "lam": result.lam,
        "M": result.M,
        "mc_failures": result.n_failures,
        "mc_sample": [float(v) for v in result.mc_sample],
        "config_sha256": _config_hash(cfg),
        "master_seed": int(cfg["seed"]),
    })
    print(path)
    return 0


# ------------------------------------------------------------------- power

def _load_records(path: Path, expected_hash: str) -> list:
    if not path.exists():
        return []
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if line_no == 0:
                if rec.get("resume_sha256") != expected_hash:
                    raise CliError(
                        f"existing results in {path} were produced by a different "
                        "configuration; use a fresh output directory"
                    )
                continue
            records.append(rec)
    return records


def cmd_power(args) -> int:
    cfg = _resolve(args, {
        "scenarios": "rich", "families": "saturable_exponential",
        "statistics": "T1", "true_family": "saturable_exponential",
        "true_tau": None, "n_datasets": None, "M": None, "alpha": 0.05,
        "lam": "cv", "bandwidth": None, "outdir": None, "seed": 0,
        "jobs": 1, "paper_scale": False, "resume": True,
    })
    scenarios = _comma_list(cfg["scenarios"], scenario_names(), "scenario")
    families = _comma_list(cfg["families"], FAMILY_KINDS, "family")
    kinds = _comma_list(cfg["statistics"], STATISTIC_KINDS, "statistic")
    n_datasets = (int(cfg["n_datasets"]) if cfg["n_datasets"] is not None
                  else (500 if cfg["paper_scale"] else 100))
    M = int(cfg["M"]) if cfg["M"] is not None else (500 if cfg["paper_scale"] else 200)
    truth = _true_family(cfg)
    lam = _parse_lambda(cfg["lam"])
    out = _outdir(cfg)
    config_hash = _config_hash(cfg)

    rows = []
    for scen in scenarios:
        for family in families:
            resume_cfg = {
                "scenario": scen, "family": family, "statistics": kinds,
                "true_family": truth.kind, "true_tau": list(truth.tau),
                "M": M, "alpha": float(cfg["alpha"]), "lam": cfg["lam"],
                "bandwidth": cfg["bandwidth"], "seed": int(cfg["seed"]),
            }
            resume_hash = _config_hash(resume_cfg)
            jsonl = out / f"power_{scen}_{family}.jsonl"
            prior = _load_records(jsonl, resume_hash) if cfg["resume"] else []
            fresh_file = not jsonl.exists() or not cfg["resume"]
            mode = "w" if fresh_file else "a"
            with open(jsonl, mode) as fh:
                if fresh_file:
                    fh.write(json.dumps({"resume_sha256": resume_hash,
                                         "config_sha256": config_hash,
                                         "master_seed": int(cfg["seed"])}) + "\n")

                def on_record(rec):
                    fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
                    fh.flush()

                kernels = None
                if cfg["bandwidth"] is not None:
                    kernels = {
                        "nonparametric": _kernel_for("nonparametric", cfg["bandwidth"]),
                        "combined": _kernel_for("combined", cfg["bandwidth"]),
                    }
                res = power_study(
                    scen, truth, family, kinds=kinds, n_datasets=n_datasets,
                    M=M, alpha=float(cfg["alpha"]), master_seed=int(cfg["seed"]),
                    lam=lam, kernels=kernels, jobs=int(cfg["jobs"]),
                    on_record=on_record, prior_records=prior,
                )
            for kind in kinds:
                rows.append([
                    scen, family, kind, res.n_ok, res.n_failed,
                    res.rejection_rate[kind], res.standard_error[kind],
                ])

    table_path = out / "power_table.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "scenario", "null_family", "statistic", "n_ok", "n_failed",
            "rejection_rate", "standard_error",
        ])
        writer.writerows(rows)
    _write_json(out / "power_run.json", {
        "config_sha256": config_hash,
        "master_seed": int(cfg["seed"]),
        "scenarios": scenarios,
        "families": families,
        "statistics": kinds,
        "n_datasets": n_datasets,
        "M": M,
    })
    print(table_path)
    return 0


# ------------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    cfg = _resolve(args, {
        "scenarios": "rich", "variants": ",".join(BENCH_VARIANTS),
        "n_datasets": 25, "lam": "cv", "threshold": 1.2,
        "true_family": "saturable_exponential", "true_tau": None,
        "bandwidth": None, "outdir": None, "seed": 0, "jobs": 1,
    })
    scenarios = _comma_list(cfg["scenarios"], scenario_names(), "scenario")
    variants = _comma_list(cfg["variants"], BENCH_VARIANTS, "variant")
    truth = _true_family(cfg)
    lam = _parse_lambda(cfg["lam"])
    out = _outdir(cfg)
    config_hash = _config_hash(cfg)

    for scen in scenarios:
        res = benchmark_study(
            scen, truth, lam=lam, n_datasets=int(cfg["n_datasets"]),
            master_seed=int(cfg["seed"]), variants=variants,
            threshold=float(cfg["threshold"]), jobs=int(cfg["jobs"]),
        )
        noise_var = scenario(scen).sigma ** 2
        csv_path = out / f"bench_{scen}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "seed", "runtime_s", "mse", "noise_variance"])
            for rec in res.records:
                writer.writerow([
                    rec["variant"], rec["dataset"], repr(rec["runtime_s"]),
                    repr(rec["mse"]), repr(noise_var),
                ])
        _write_json(out / f"bench_{scen}_summary.json", {
            "scenario": scen,
            "lam": res.lam,
            "threshold": res.threshold,
            "success_fraction": res.success_fraction,
            "median_runtime_s": res.median_runtime_s,
            "config_sha256": config_hash,
            "master_seed": int(cfg["seed"]),
        })
        print(csv_path)
    return 0


# ----------------------------------------------------------------- wiring

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--outdir", help="output directory (default $COVGOF_OUTDIR or .)")
    sub.add_argument("--seed", type=int, help="master seed (default 0)")
    sub.add_argument("--jobs", type=int, help="parallel worker count (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covgof",
        description="Goodness-of-fit testing of parametric covariate models "
                    "in a nonlinear mechanistic observation model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset and write CSV + metadata")
    _add_common(p)
    p.add_argument("--scenario", help="rich | sparse | noisy | multi")
    p.add_argument("--sigma", type=float, help="override the scenario noise level")
    p.add_argument("--true-family", dest="true_family", help="generating family kind")
    p.add_argument("--true-tau", dest="true_tau", type=json.loads,
                   help="generating parameters as a JSON list")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one estimator and emit the clearance curve")
    _add_common(p)
    p.add_argument("--estimator", help="parametric | nonparametric | combined | smoothed")
    p.add_argument("--family", help="parametric family kind")
    p.add_argument("--data", help="dataset base path (from simulate)")
    p.add_argument("--scenario", help="simulate instead of loading")
    p.add_argument("--sigma", type=float)
    p.add_argument("--true-family", dest="true_family")
    p.add_argument("--true-tau", dest="true_tau", type=json.loads)
    p.add_argument("--lambda", dest="lam", help="regularization weight or 'cv'")
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth in years")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validate the regularization weight")
    _add_common(p)
    p.add_argument("--estimator", help="nonparametric | combined")
    p.add_argument("--family", help="parametric family kind")
    p.add_argument("--data", help="dataset base path")
    p.add_argument("--scenario")
    p.add_argument("--sigma", type=float)
    p.add_argument("--true-family", dest="true_family")
    p.add_argument("--true-tau", dest="true_tau", type=json.loads)
    p.add_argument("--grid", type=json.loads, help="JSON list of weights")
    p.add_argument("--folds", type=int)
    p.add_argument("--bandwidth", type=float)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("test", help="run one goodness-of-fit test")
    _add_common(p)
    p.add_argument("--family", help="null family kind")
    p.add_argument("--statistic", help=" | ".join(STATISTIC_KINDS))
    p.add_argument("--data", help="dataset base path")
    p.add_argument("--scenario")
    p.add_argument("--sigma", type=float)
    p.add_argument("--true-family", dest="true_family")
    p.add_argument("--true-tau", dest="true_tau", type=json.loads)
    p.add_argument("--lambda", dest="lam")
    p.add_argument("-M", "--replicates", dest="M", type=int,
                   help="Monte Carlo sample size")
    p.add_argument("--alpha", type=float)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--paper-scale", dest="paper_scale", action="store_const",
                   const=True, help="use the full study scale defaults")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("power", help="repeat tests over many simulated datasets")
    _add_common(p)
    p.add_argument("--scenarios", help="comma list of scenario names")
    p.add_argument("--families", help="comma list of null family kinds")
    p.add_argument("--statistics", help="comma list of statistic kinds")
    p.add_argument("--true-family", dest="true_family")
    p.add_argument("--true-tau", dest="true_tau", type=json.loads)
    p.add_argument("--n-datasets", dest="n_datasets", type=int)
    p.add_argument("-M", "--replicates", dest="M", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--paper-scale", dest="paper_scale", action="store_const", const=True)
    p.add_argument("--no-resume", dest="resume", action="store_const", const=False,
                   help="ignore existing partial results")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("bench", help="benchmark the solution strategies")
    _add_common(p)
    p.add_argument("--scenarios", help="comma list of scenario names")
    p.add_argument("--variants", help="comma list of benchmark variants")
    p.add_argument("--n-datasets", dest="n_datasets", type=int)
    p.add_argument("--lambda", dest="lam")
    p.add_argument("--threshold", type=float)
    p.add_argument("--true-family", dest="true_family")
    p.add_argument("--true-tau", dest="true_tau", type=json.loads)
    p.add_argument("--bandwidth", type=float)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - single-line reporting contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
