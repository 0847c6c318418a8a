"""Goodness-of-fit tests for parametric covariate families.

Six statistics compare a parametric null fit against a richer alternative
fit, either through the forward model's predictions (T1, T1star, T2) or
directly on the covariate-to-parameter functions at the observed covariates
(S1, S1star, S2). The plain variants compare against the nonparametric
estimator, the starred ones replace the parametric side by its smoothed
version, and T2/S2 compare against the combined parametric-plus-deviation
estimator. Critical values come from a Monte Carlo sample of the statistic
under data simulated from the fitted null model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .cv import cross_validate_lambda
from .estimators import (
    FitOptions,
    fit_combined,
    fit_nonparametric,
    fit_parametric,
    fit_smoothed_parametric,
)
from .families import ParametricFamily
from .invlinear import NumericsError
from .kernels import KernelSpec, clearance_only_kernel, maturation_kernel
from .pkmodel import Dataset, PkDomainError, ScenarioSpec, scenario, simulate_dataset

STATISTIC_KINDS = ("T1", "T1star", "T2", "S1", "S1star", "S2")

_LEFT_ROLE = {
    "T1": "parametric", "T1star": "smoothed", "T2": "parametric",
    "S1": "parametric", "S1star": "smoothed", "S2": "parametric",
}
_RIGHT_ROLE = {
    "T1": "nonparametric", "T1star": "nonparametric", "T2": "combined",
    "S1": "nonparametric", "S1star": "nonparametric", "S2": "combined",
}

MAX_FAILURE_FRACTION = 0.05


def statistic_profile(kind: str) -> str:
    """Which regularized estimator a statistic is built on."""
    _check_kind(kind)
    return "combined" if _RIGHT_ROLE[kind] == "combined" else "nonparametric"


def required_fits(kind: str) -> tuple[str, ...]:
    """Roles of the fits a statistic needs, parametric first."""
    _check_kind(kind)
    roles = ["parametric"]
    if _LEFT_ROLE[kind] == "smoothed":
        roles.append("smoothed")
    roles.append(_RIGHT_ROLE[kind])
    return tuple(roles)


def _check_kind(kind: str) -> None:
    if kind not in STATISTIC_KINDS:
        raise ValueError(f"unknown statistic kind {kind!r}")


def compute_statistic(
    kind: str,
    dataset: Dataset,
    parametric_fit=None,
    nonparametric_fit=None,
    combined_fit=None,
    smoothed_fit=None,
) -> float:
    """Sum over individuals of squared distances between two fits.

    T-statistics measure the distance between the fits' predicted log
    concentrations, S-statistics between the fitted parameter functions at
    the training covariates. Raises ValueError when a required fit is
    missing or cannot be evaluated at the training points.
    """
    _check_kind(kind)
    fits = {
        "parametric": parametric_fit,
        "nonparametric": nonparametric_fit,
        "combined": combined_fit,
        "smoothed": smoothed_fit,
    }
    left = fits[_LEFT_ROLE[kind]]
    right = fits[_RIGHT_ROLE[kind]]
    if left is None or right is None:
        raise ValueError(
            f"statistic {kind} needs {_LEFT_ROLE[kind]} and {_RIGHT_ROLE[kind]} fits"
        )
    attr = "train_pred" if kind.startswith("T") else "train_theta"
    a = np.asarray(getattr(left, attr), dtype=float)
    b = np.asarray(getattr(right, attr), dtype=float)
    if a.shape[0] != dataset.n or a.shape != b.shape:
        raise ValueError("fits do not match the dataset")
    value = float(np.sum((a - b) ** 2))
    if not np.isfinite(value):
        raise ValueError(f"statistic {kind} is not finite for these fits")
    return value


def _resolve_kernels(kernels, kinds) -> dict[str, KernelSpec]:
    profiles = {statistic_profile(k) for k in kinds}
    if isinstance(kernels, KernelSpec):
        return {prof: kernels for prof in profiles}
    out = dict(kernels) if kernels else {}
    if "nonparametric" in profiles and "nonparametric" not in out:
        out["nonparametric"] = maturation_kernel()
    if "combined" in profiles and "combined" not in out:
        out["combined"] = clearance_only_kernel()
    return out


def _resolve_lambdas(dataset, family_kind, kinds, lam, kernels, options, cv_seed):
    profiles = {statistic_profile(k) for k in kinds}
    if isinstance(lam, dict):
        missing = profiles - set(lam)
        if missing:
            raise ValueError(f"missing regularization weight for {sorted(missing)}")
        return {prof: float(lam[prof]) for prof in profiles}
    if lam is not None:
        return {prof: float(lam) for prof in profiles}
    out = {}
    for prof in sorted(profiles):
        res = cross_validate_lambda(
            dataset, estimator=prof, kernel=kernels[prof],
            seed=cv_seed, family_kind=family_kind, options=options,
        )
        out[prof] = res.lam
    return out


def pipeline_fits(
    dataset: Dataset,
    family_kind: str,
    kinds,
    lams: dict[str, float],
    kernels: dict[str, KernelSpec],
    tau0=None,
    options: FitOptions | None = None,
) -> dict:
    """Run every estimator the requested statistics need, sharing work.

    Returns a dict with the parametric fit plus whichever of the
    nonparametric, smoothed and combined fits the kinds require.
    """
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    roles = set()
    for kind in kinds:
        roles.update(required_fits(kind))
    lm_options = None if options is None else options.lm
    fits = {"parametric": fit_parametric(dataset, family_kind, tau0=tau0, options=lm_options)}
    if "nonparametric" in roles:
        fits["nonparametric"] = fit_nonparametric(
            dataset, kernels["nonparametric"], lams["nonparametric"],
            options=options, init_fit=fits["parametric"],
        )
    if "smoothed" in roles:
        fits["smoothed"] = fit_smoothed_parametric(
            dataset, fits["parametric"], kernels["nonparametric"],
            lams["nonparametric"], options=options,
        )
    if "combined" in roles:
        fits["combined"] = fit_combined(
            dataset, family_kind, kernels["combined"], lams["combined"],
            options=options, parametric_fit=fits["parametric"],
        )
    return fits


def _statistics_from_fits(kinds, dataset, fits) -> dict[str, float]:
    return {
        kind: compute_statistic(
            kind, dataset,
            parametric_fit=fits.get("parametric"),
            nonparametric_fit=fits.get("nonparametric"),
            combined_fit=fits.get("combined"),
            smoothed_fit=fits.get("smoothed"),
        )
        for kind in kinds
    }


def _replicate_task(args):
    (base, sigma, family_kind, tau_hat, kinds, lams, kernels, options, child) = args
    rng = np.random.default_rng(child)
    noise = rng.standard_normal(base.y.shape)
    replicate = base.with_y(base.y + sigma * noise)
    try:
        fits = pipeline_fits(
            replicate, family_kind, kinds, lams, kernels,
            tau0=tau_hat, options=options,
        )
        return _statistics_from_fits(kinds, replicate, fits)
    except (PkDomainError, NumericsError, ValueError):
        return None


def monte_carlo_null_sample(
    dataset: Dataset,
    family_kind: str,
    tau_hat,
    kinds,
    M: int,
    master_seed,
    lam,
    kernels=None,
    options: FitOptions | None = None,
    jobs: int = 1,
) -> tuple[dict[str, np.ndarray], int]:
    """Sample the statistics under the fitted null model.

    Keeps the observed covariates and times, simulates M synthetic
    observation sets from the parametric fit tau_hat with the dataset's
    noise level, reruns the estimation pipeline on each (the parametric
    refit warm-starts at tau_hat), and returns the statistic values in
    replicate order together with the number of failed replicates. Failed
    replicates are dropped; more than 5 percent of them is a calibration
    error.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    for kind in kinds:
        _check_kind(kind)
    kernels = _resolve_kernels(kernels, kinds)
    lams = lam if isinstance(lam, dict) else {
        statistic_profile(k): float(lam) for k in kinds
    }
    fam = ParametricFamily(family_kind, tau_hat)
    model = dataset.forward_model
    pred0 = model.predict(fam.theta_star(dataset.ages), dataset.weights)
    base = dataset.with_y(pred0)
    children = _seed_sequence(master_seed).spawn(M)
    tasks = [
        (base, dataset.sigma, family_kind, tuple(fam.tau), kinds, lams,
         kernels, options, children[m])
        for m in range(M)
    ]
    results = parallel_map(_replicate_task, tasks, jobs=jobs)
    kept = [r for r in results if r is not None]
    failures = M - len(kept)
    if failures > MAX_FAILURE_FRACTION * M:
        raise NumericsError(
            f"Monte Carlo calibration failed: {failures} of {M} replicates unusable"
        )
    sample = {
        kind: np.array([r[kind] for r in kept], dtype=float) for kind in kinds
    }
    return sample, failures


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def critical_value(sample, alpha: float) -> float:
    """Upper critical value: order statistic of rank ceil((1-alpha)(M+1))."""
    s = np.sort(np.asarray(sample, dtype=float))
    if s.size == 0:
        raise ValueError("empty Monte Carlo sample")
    rank = min(s.size, max(1, math.ceil((1.0 - alpha) * (s.size + 1))))
    return float(s[rank - 1])


def p_value(sample, observed: float) -> float:
    """Empirical p-value (1 + #{sample >= observed}) / (M + 1), always in (0, 1]."""
    s = np.asarray(sample, dtype=float)
    return float((1 + np.count_nonzero(s >= observed)) / (s.size + 1))


@dataclass(frozen=True, eq=False)
class TestResult:
    kind: str
    observed: float
    mc_sample: np.ndarray
    critical_value: float
    p_value: float
    reject: bool
    alpha: float
    lam: float
    family_kind: str
    master_seed: int
    n_failures: int

    @property
    def M(self) -> int:
        return int(self.mc_sample.size)


def gof_test(
    dataset: Dataset,
    family_kind: str,
    kernel=None,
    lam=None,
    kind: str = "T1",
    M: int = 200,
    alpha: float = 0.05,
    master_seed: int = 0,
    options: FitOptions | None = None,
    jobs: int = 1,
    tau0=None,
) -> TestResult:
    """Test a parametric family against the data with one statistic.

    Fits the null family, computes the observed statistic, calibrates the
    critical value with M Monte Carlo replicates under the fitted null, and
    rejects when the observed value exceeds it. ``lam=None`` selects the
    regularization weight by cross-validation on the dataset first.
    """
    _check_kind(kind)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if M < 1:
        raise ValueError("M must be at least 1")
    kernels = _resolve_kernels(kernel, [kind])
    root = _seed_sequence(master_seed)
    cv_ss, mc_ss = root.spawn(2)
    lams = _resolve_lambdas(
        dataset, family_kind, [kind], lam, kernels, options,
        cv_seed=int(cv_ss.generate_state(1)[0]),
    )
    fits = pipeline_fits(dataset, family_kind, [kind], lams, kernels,
                         tau0=tau0, options=options)
    observed = _statistics_from_fits([kind], dataset, fits)[kind]
    sample, failures = monte_carlo_null_sample(
        dataset, family_kind, fits["parametric"].family.tau, [kind],
        M, mc_ss, lams, kernels, options=options, jobs=jobs,
    )
    crit = critical_value(sample[kind], alpha)
    pval = p_value(sample[kind], observed)
    return TestResult(
        kind=kind,
        observed=observed,
        mc_sample=sample[kind],
        critical_value=crit,
        p_value=pval,
        reject=bool(observed > crit),
        alpha=alpha,
        lam=lams[statistic_profile(kind)],
        family_kind=family_kind,
        master_seed=master_seed if isinstance(master_seed, int) else -1,
        n_failures=failures,
    )


@dataclass(frozen=True, eq=False)
class PowerResult:
    scenario: str
    true_family: ParametricFamily
    null_family_kind: str
    kinds: tuple[str, ...]
    alpha: float
    M: int
    lams: dict
    master_seed: int
    rejection_rate: dict
    standard_error: dict
    n_ok: int
    n_failed: int
    records: tuple


def power_study(
    scenario_spec,
    true_family: ParametricFamily,
    null_family_kind: str,
    kinds=("T1",),
    n_datasets: int = 100,
    M: int = 200,
    alpha: float = 0.05,
    master_seed: int = 0,
    lam=None,
    kernels=None,
    options: FitOptions | None = None,
    jobs: int = 1,
    dataset_indices=None,
    on_record=None,
    prior_records=(),
) -> PowerResult:
    """Rejection frequency of the tests over repeated simulated datasets.

    Simulates ``n_datasets`` datasets from ``true_family`` under the
    scenario, runs the goodness-of-fit test of ``null_family_kind`` with
    every requested statistic on each (the underlying fits are shared
    between statistics), and reports per-statistic rejection fractions with
    binomial standard errors. Each dataset's record is a JSON-friendly dict;
    ``on_record`` is called with each fresh record, and ``prior_records``
    plus ``dataset_indices`` allow resuming an interrupted study. With
    ``lam=None`` the regularization weight is chosen once by
    cross-validation on a pilot dataset simulated from the truth.
    """
    spec = scenario(scenario_spec) if isinstance(scenario_spec, str) else scenario_spec
    if not isinstance(spec, ScenarioSpec):
        raise ValueError("scenario_spec must be a name or a ScenarioSpec")
    kinds = (kinds,) if isinstance(kinds, str) else tuple(kinds)
    for kind in kinds:
        _check_kind(kind)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    true_family.validate()
    kernels = _resolve_kernels(kernels, kinds)

    root = _seed_sequence(master_seed)
    children = root.spawn(n_datasets + 1)
    pilot_sim, pilot_cv = children[0].spawn(2)
    if lam is None:
        pilot = simulate_dataset(spec, true_family, seed=pilot_sim)
        lams = _resolve_lambdas(
            pilot, null_family_kind, kinds, None, kernels, options,
            cv_seed=int(pilot_cv.generate_state(1)[0]),
        )
    else:
        lams = _resolve_lambdas(None, null_family_kind, kinds, lam, kernels,
                                options, cv_seed=0)

    done = {int(r["dataset"]) for r in prior_records}
    if dataset_indices is None:
        indices = [i for i in range(n_datasets) if i not in done]
    else:
        indices = [i for i in dataset_indices if i not in done]

    records = [dict(r) for r in prior_records]
    for i in indices:
        sim_ss, mc_ss = children[i + 1].spawn(2)
        record = {"dataset": int(i)}
        try:
            ds = simulate_dataset(spec, true_family, seed=sim_ss)
            fits = pipeline_fits(ds, null_family_kind, kinds, lams, kernels,
                                 options=options)
            observed = _statistics_from_fits(kinds, ds, fits)
            sample, failures = monte_carlo_null_sample(
                ds, null_family_kind, fits["parametric"].family.tau, kinds,
                M, mc_ss, lams, kernels, options=options, jobs=jobs,
            )
        except (PkDomainError, NumericsError, ValueError) as exc:
            record.update(failed=True, error=str(exc))
            records.append(record)
            if on_record is not None:
                on_record(record)
            continue
        record.update(
            failed=False,
            tau_hat=list(fits["parametric"].family.tau),
            mc_failures=int(failures),
            statistics={},
        )
        for kind in kinds:
            crit = critical_value(sample[kind], alpha)
            pval = p_value(sample[kind], observed[kind])
            record["statistics"][kind] = {
                "observed": observed[kind],
                "critical_value": crit,
                "p_value": pval,
                "reject": bool(observed[kind] > crit),
            }
        records.append(record)
        if on_record is not None:
            on_record(record)

    ok = [r for r in records if not r.get("failed")]
    n_ok = len(ok)
    rate, se = {}, {}
    for kind in kinds:
        if n_ok == 0:
            rate[kind] = math.nan
            se[kind] = math.nan
            continue
        hits = sum(1 for r in ok if r["statistics"][kind]["reject"])
        phat = hits / n_ok
        rate[kind] = phat
        se[kind] = math.sqrt(phat * (1.0 - phat) / n_ok)
    return PowerResult(
        scenario=spec.name,
        true_family=true_family,
        null_family_kind=null_family_kind,
        kinds=kinds,
        alpha=alpha,
        M=M,
        lams=lams,
        master_seed=master_seed if isinstance(master_seed, int) else -1,
        rejection_rate=rate,
        standard_error=se,
        n_ok=n_ok,
        n_failed=len(records) - n_ok,
        records=tuple(records),
    )
