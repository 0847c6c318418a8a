"""Benchmark of solution strategies for the nonparametric Tikhonov problem.

Five ways to minimize the same objective, compared on simulated datasets by
residual mean squared error and runtime:

* ``staged_full``: parametric pilot, direct solve, linearize-and-solve
  passes, quasi-Newton polish.
* ``staged_linear_only``: the same without the quasi-Newton stage.
* ``staged_newton_only``: the same without the linearize-and-solve stage.
* ``quasi_newton_random``: quasi-Newton from random positive coefficients.
* ``annealing_random``: simulated annealing from random positive
  coefficients.

Three more variants stage the combined parametric-plus-deviation problem
the same way: ``combined_full``, ``combined_linear_only`` and
``combined_newton_only``, all fixing the parametric part first and starting
the deviation at zero.

The staged variants deliberately use the affine-linear family as pilot, a
qualitatively wrong but order-of-magnitude-correct guess, with its start
values lognormally perturbed (log-variance 1). The random starts are
lognormal around 1 per coefficient. A fit counts as successful when its
mean squared residual is within ``threshold`` times the noise variance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ._parallel import parallel_map
from .cv import cross_validate_lambda
from .estimators import (
    FitOptions,
    fit_combined,
    fit_nonparametric,
    make_workspace,
    rkhs_objective,
)
from .families import AFFINE, ParametricFamily, default_start, family_dim
from .invlinear import NumericsError
from .kernels import KernelSpec, clearance_only_kernel, maturation_kernel
from .optimize import SolverOptions, quasi_newton, simulated_annealing
from .pkmodel import PkDomainError, ScenarioSpec, scenario, simulate_dataset

BENCH_VARIANTS = (
    "staged_full",
    "staged_linear_only",
    "staged_newton_only",
    "quasi_newton_random",
    "annealing_random",
    "combined_full",
    "combined_linear_only",
    "combined_newton_only",
)

_STAGED = {"staged_full", "staged_linear_only", "staged_newton_only"}
_COMBINED = {"combined_full", "combined_linear_only", "combined_newton_only"}


@dataclass(frozen=True, eq=False)
class BenchResult:
    scenario: str
    variants: tuple
    lam: float
    threshold: float
    master_seed: int
    success_fraction: dict
    median_runtime_s: dict
    records: tuple


def _run_variant(ds, variant, lam, kernel, combined_kernel, options, sa_options, seed_seq):
    rng_ss, solver_ss = seed_seq.spawn(2)
    rng = np.random.default_rng(rng_ss)
    t0 = time.perf_counter()
    degraded = False
    try:
        if variant in _STAGED or variant in _COMBINED:
            tau0 = default_start(AFFINE) * np.exp(
                rng.standard_normal(family_dim(AFFINE))
            )
            opts = replace(
                options,
                linearized=not variant.endswith("newton_only"),
                nonlinear=not variant.endswith("linear_only"),
            )
            if variant in _COMBINED:
                fit = fit_combined(
                    ds, AFFINE, combined_kernel, lam, tau0=tau0, options=opts
                )
            else:
                fit = fit_nonparametric(
                    ds, kernel, lam, init_family_kind=AFFINE, tau0=tau0, options=opts
                )
            pred = fit.train_pred
            objective = fit.objective
            degraded = fit.degraded
        else:
            ws = make_workspace(ds, kernel, lam)
            obj_fn, grad_fn = rkhs_objective(ws, ds.y)
            gamma0 = np.exp(rng.standard_normal(ws.ops.d))
            if variant == "quasi_newton_random":
                rep = quasi_newton(obj_fn, gamma0, grad_fn, options.qn)
            elif variant == "annealing_random":
                sa = replace(
                    sa_options, seed=int(solver_ss.generate_state(1)[0])
                )
                rep = simulated_annealing(obj_fn, gamma0, sa)
            else:
                raise ValueError(f"unknown benchmark variant {variant!r}")
            objective = rep.fun
            theta = (ws.ops.M3 @ rep.x).T
            pred = ws.model.predict(theta, ws.weights)
    except (PkDomainError, NumericsError) as exc:
        return {
            "variant": variant,
            "mse": float("inf"),
            "runtime_s": time.perf_counter() - t0,
            "objective": float("inf"),
            "degraded": True,
            "error": str(exc),
        }
    mse = float(np.mean((ds.y - pred) ** 2))
    return {
        "variant": variant,
        "mse": mse if np.isfinite(mse) else float("inf"),
        "runtime_s": time.perf_counter() - t0,
        "objective": float(objective),
        "degraded": bool(degraded),
    }


def _bench_dataset_task(args):
    (spec, true_family, lam, kernel, combined_kernel, variants, options,
     sa_options, i, child) = args
    streams = child.spawn(1 + len(variants))
    ds = simulate_dataset(spec, true_family, seed=streams[0])
    records = []
    for v, variant in enumerate(variants):
        rec = _run_variant(ds, variant, lam, kernel, combined_kernel,
                           options, sa_options, streams[1 + v])
        rec["dataset"] = int(i)
        records.append(rec)
    return records


def benchmark_study(
    scenario_spec,
    true_family: ParametricFamily,
    lam: float | None = None,
    n_datasets: int = 10,
    master_seed: int = 0,
    variants=BENCH_VARIANTS,
    kernel: KernelSpec | None = None,
    combined_kernel: KernelSpec | None = None,
    options: FitOptions | None = None,
    sa_options: SolverOptions | None = None,
    threshold: float = 1.2,
    jobs: int = 1,
) -> BenchResult:
    """Run every variant on independently simulated datasets.

    With ``lam=None`` the regularization weight is cross-validated once on a
    pilot dataset and then held fixed, so variants and datasets stay
    comparable. Returns per-(dataset, variant) records plus per-variant
    success fractions and median runtimes.
    """
    spec = scenario(scenario_spec) if isinstance(scenario_spec, str) else scenario_spec
    if not isinstance(spec, ScenarioSpec):
        raise ValueError("scenario_spec must be a name or a ScenarioSpec")
    variants = tuple(variants)
    for variant in variants:
        if variant not in BENCH_VARIANTS:
            raise ValueError(f"unknown benchmark variant {variant!r}")
    true_family.validate()
    kernel = maturation_kernel() if kernel is None else kernel
    combined_kernel = clearance_only_kernel() if combined_kernel is None else combined_kernel
    options = options or FitOptions()
    sa_options = sa_options or SolverOptions()

    root = np.random.SeedSequence(master_seed)
    children = root.spawn(n_datasets + 1)
    if lam is None:
        pilot_sim, pilot_cv = children[0].spawn(2)
        pilot = simulate_dataset(spec, true_family, seed=pilot_sim)
        lam = cross_validate_lambda(
            pilot, estimator="nonparametric", kernel=kernel,
            seed=int(pilot_cv.generate_state(1)[0]), options=options,
        ).lam
    lam = float(lam)

    tasks = [
        (spec, true_family, lam, kernel, combined_kernel, variants, options,
         sa_options, i, children[i + 1])
        for i in range(n_datasets)
    ]
    nested = parallel_map(_bench_dataset_task, tasks, jobs=jobs)
    records = [rec for group in nested for rec in group]

    noise_var = spec.sigma**2
    success, medians = {}, {}
    for variant in variants:
        rows = [r for r in records if r["variant"] == variant]
        hits = sum(1 for r in rows if r["mse"] <= threshold * noise_var)
        success[variant] = hits / len(rows) if rows else float("nan")
        medians[variant] = float(np.median([r["runtime_s"] for r in rows]))
    return BenchResult(
        scenario=spec.name,
        variants=variants,
        lam=lam,
        threshold=threshold,
        master_seed=master_seed,
        success_fraction=success,
        median_runtime_s=medians,
        records=tuple(records),
    )
