"""Two-compartment pharmacokinetic forward model and the simulation study setup.

The observation operator maps an individual's standardized parameters
``theta* = (CL*, V1*, Q*, V2*)`` (70 kg reference adult) and covariates
``x = (age, weight)`` to log concentrations at fixed sampling times after an
IV bolus.  Weight enters through fixed allometric scaling:

    CL = CL* (w/70)^0.75,  Q = Q* (w/70)^0.75,  V1 = V1* (w/70),  V2 = V2* (w/70).

For scaled parameters the central-compartment concentration after a single
bolus dose ``D`` at t = 0 is the biexponential

    C1(t) = (D / V1) (zeta1 - zeta2)^-1 [(zeta1 + Q/V2) e^{zeta1 t}
                                         - (zeta2 + Q/V2) e^{zeta2 t}]

with zeta_{1,2} = (-a +- sqrt(a^2 - 4b))/2, a = (CL+Q)/V1 + Q/V2 and
b = CL Q / (V1 V2); both rates are strictly negative for positive parameters.
Repeated doses superpose, each counted from its own dose time (a dose landing
exactly on a sampling time is included in that sample).

Units: volumes L, flows L/day, doses mg, times days, ages years, so
concentrations come out in mg/L and C1(0) = D/V1 exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .families import ParametricFamily

__all__ = [
    "Dataset",
    "DosingSchedule",
    "PkDomainError",
    "PkModel",
    "ScenarioSpec",
    "WeightModel",
    "allometric_scale",
    "covariate_family_eval",
    "load_dataset",
    "mechanistic_G",
    "save_dataset",
    "scenario",
    "scenario_names",
    "simulate_dataset",
    "two_cmt_concentration",
    "weight_for_age",
]

REFERENCE_WEIGHT_KG = 70.0


class PkDomainError(ValueError):
    """Model evaluation requested at invalid parameters.

    ``index`` is the offending individual when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DosingSchedule:
    """Repeated weight-proportional IV bolus doses."""

    dose_per_kg: float = 15.0
    interval_days: float = 30.0
    n_doses: int = 1

    def __post_init__(self):
        if self.dose_per_kg <= 0 or self.interval_days <= 0 or self.n_doses < 1:
            raise ValueError("dosing schedule fields must be positive")

    @property
    def dose_times(self) -> np.ndarray:
        return self.interval_days * np.arange(self.n_doses, dtype=float)

    def dose_mg(self, weights) -> np.ndarray:
        return self.dose_per_kg * np.asarray(weights, dtype=float)


def allometric_scale(theta_star, weights) -> np.ndarray:
    """Scale standardized parameters to bodyweight; shapes (n, 4) and (n,)."""
    th = np.asarray(theta_star, dtype=float)
    w = np.asarray(weights, dtype=float)
    rel = (w / REFERENCE_WEIGHT_KG)[..., None]
    factors = np.concatenate(
        [rel**0.75, rel, rel**0.75, rel], axis=-1
    )
    return th * factors


def _check_theta(theta: np.ndarray) -> None:
    ok = np.isfinite(theta).all(axis=-1) & (theta > 0.0).all(axis=-1)
    if not ok.all():
        idx = int(np.argmax(~np.atleast_1d(ok)))
        raise PkDomainError("nonpositive or non-finite PK parameters", index=idx)


def _rate_constants(theta: np.ndarray):
    """Biexponential rates and partials setup; theta is scaled, shape (n, 4)."""
    CL, V1, Q, V2 = (theta[:, j] for j in range(4))
    a = (CL + Q) / V1 + Q / V2
    b = CL * Q / (V1 * V2)
    disc = a * a - 4.0 * b
    s = np.sqrt(np.maximum(disc, 0.0))
    if np.any(s <= 1e-12 * a):
        idx = int(np.argmax(s <= 1e-12 * a))
        raise PkDomainError("degenerate biexponential rates", index=idx)
    z1 = 0.5 * (-a + s)
    z2 = 0.5 * (-a - s)
    return a, b, s, z1, z2


def _profiles(theta, dose_mg, times, dose_times, with_partials):
    """Concentrations (n, q) and optionally partials (n, q, 4) w.r.t. scaled params."""
    n = theta.shape[0]
    q = times.shape[0]
    CL, V1, Q, V2 = (theta[:, j][:, None] for j in range(4))
    a, b, s, z1, z2 = (v[:, None] for v in _rate_constants(theta))
    c = Q / V2
    k0 = np.asarray(dose_mg, dtype=float)[:, None] / V1

    C = np.zeros((n, q))
    dC = np.zeros((n, q, 4)) if with_partials else None
    if with_partials:
        a_p = np.stack(
            [1.0 / V1, -(CL + Q) / V1**2, 1.0 / V1 + 1.0 / V2, -Q / V2**2], axis=-1
        )
        b_p = np.stack(
            [Q / (V1 * V2), -CL * Q / (V1**2 * V2), CL / (V1 * V2), -CL * Q / (V1 * V2**2)],
            axis=-1,
        )
        c_p = np.stack(
            [np.zeros_like(V2), np.zeros_like(V2), 1.0 / V2, -Q / V2**2], axis=-1
        )
        k0_p = np.zeros((n, 1, 4))
        k0_p[:, :, 1] = -k0 / V1
        s_p = (a[..., None] * a_p - 2.0 * b_p) / s[..., None]
        z1_p = 0.5 * (-a_p + s_p)
        z2_p = 0.5 * (-a_p - s_p)

    for t0 in dose_times:
        t = times[None, :] - t0
        mask = t >= 0.0
        t = np.where(mask, t, 0.0)
        E1 = np.exp(z1 * t) * mask
        E2 = np.exp(z2 * t) * mask
        N = (z1 + c) * E1 - (z2 + c) * E2
        C += k0 * N / s
        if with_partials:
            tE = t[..., None]
            N_p = (
                (z1_p + c_p) * E1[..., None]
                + (z1 + c)[..., None] * tE * z1_p * E1[..., None]
                - (z2_p + c_p) * E2[..., None]
                - (z2 + c)[..., None] * tE * z2_p * E2[..., None]
            )
            dC += k0_p * (N / s)[..., None] + k0[..., None] * (
                N_p * s[..., None] - N[..., None] * s_p
            ) / s[..., None] ** 2
    return C, dC


def two_cmt_concentration(theta_scaled, dose_mg, times, dose_times=(0.0,)) -> np.ndarray:
    """Central concentration (mg/L) for one scaled parameter vector; shape (q,).

    Doses are superposed at the given dose times; times before the first
    dose contribute zero concentration.
    """
    theta = np.asarray(theta_scaled, dtype=float).reshape(1, 4)
    _check_theta(theta)
    C, _ = _profiles(
        theta,
        np.atleast_1d(np.asarray(dose_mg, dtype=float)),
        np.atleast_1d(np.asarray(times, dtype=float)),
        np.atleast_1d(np.asarray(dose_times, dtype=float)),
        with_partials=False,
    )
    return C[0]


def mechanistic_G(theta_star, x, schedule: DosingSchedule, times) -> np.ndarray:
    """Log concentrations for one individual with covariates ``x = (age, weight)``.

    The kinetics depend on the covariates only through the weight (allometric
    scaling and the per-kg dose); the age enters upstream, through the
    covariate-to-parameter mapping that produced ``theta_star``.
    """
    _age, weight = float(x[0]), float(x[1])
    model = PkModel(times=np.atleast_1d(np.asarray(times, dtype=float)), schedule=schedule)
    return model.predict(np.asarray(theta_star, dtype=float).reshape(1, 4), [weight])[0]


def weight_for_age(ages, rng: np.random.Generator, model: WeightModel | None = None) -> np.ndarray:
    """Draw body weights for the given ages from the surrogate growth model."""
    return (model or WeightModel()).sample(ages, rng)


@dataclass(frozen=True, eq=False)
class PkModel:
    """Observation operator: log concentrations at fixed times for n individuals."""

    times: np.ndarray
    schedule: DosingSchedule = DosingSchedule()

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if t.size == 0 or np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ValueError("sampling times must be finite and nonnegative")
        object.__setattr__(self, "times", t)

    @property
    def q(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return 4

    def predict(self, theta_star, weights) -> np.ndarray:
        """Log concentrations ln C1, shape (n, q)."""
        th = np.asarray(theta_star, dtype=float).reshape(-1, 4)
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        _check_theta(th)
        scaled = allometric_scale(th, w)
        _check_theta(scaled)
        C, _ = _profiles(
            scaled, self.schedule.dose_mg(w), self.times, self.schedule.dose_times, False
        )
        # Extreme parameter values can underflow C to zero; let the log go to
        # -inf quietly, callers treat non-finite objectives as infeasible.
        with np.errstate(divide="ignore"):
            return np.log(C)

    def jacobian(self, theta_star, weights) -> np.ndarray:
        """d(ln C1)/d(theta*), shape (n, q, 4)."""
        th = np.asarray(theta_star, dtype=float).reshape(-1, 4)
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        _check_theta(th)
        scaled = allometric_scale(th, w)
        _check_theta(scaled)
        C, dC = _profiles(
            scaled, self.schedule.dose_mg(w), self.times, self.schedule.dose_times, True
        )
        rel = (w / REFERENCE_WEIGHT_KG)[:, None]
        factors = np.stack([rel**0.75, rel, rel**0.75, rel], axis=-1)
        # d ln C / d theta* = (dC/dtheta_scaled) * (dtheta_scaled/dtheta*) / C
        return dC * factors / C[..., None]


@dataclass(frozen=True)
class WeightModel:
    """Bodyweight surrogate: saturating median growth curve with lognormal scatter."""

    birth_kg: float = 3.5
    gain_kg: float = 66.5
    half_age_years: float = 9.0
    hill: float = 1.4
    cv: float = 0.15

    def median(self, ages) -> np.ndarray:
        a = np.asarray(ages, dtype=float)
        ah = a**self.hill
        return self.birth_kg + self.gain_kg * ah / (ah + self.half_age_years**self.hill)

    def sample(self, ages, rng: np.random.Generator) -> np.ndarray:
        a = np.atleast_1d(np.asarray(ages, dtype=float))
        sigma = np.sqrt(np.log1p(self.cv**2))
        return self.median(a) * np.exp(sigma * rng.standard_normal(a.shape[0]))


@dataclass(frozen=True)
class ScenarioSpec:
    """Sampling design of one simulated study arm."""

    name: str
    n: int
    sigma: float
    times: tuple
    n_doses: int = 1

    def __post_init__(self):
        if self.n < 1 or self.sigma < 0 or self.n_doses < 1 or len(self.times) == 0:
            raise ValueError("scenario fields must be positive and times non-empty")

    @property
    def q(self) -> int:
        return len(self.times)


_RICH_TIMES = (0.5, 1.0, 2.0, 3.0, 4.0, 7.0, 14.0, 21.0)

_SCENARIOS = {
    "rich": ScenarioSpec("rich", 100, 0.1, _RICH_TIMES),
    "sparse": ScenarioSpec("sparse", 20, 0.1, (1.0, 2.0, 4.0, 7.0, 21.0)),
    "noisy": ScenarioSpec("noisy", 100, 0.3, _RICH_TIMES),
    "multi": ScenarioSpec(
        "multi",
        100,
        0.3,
        _RICH_TIMES + (40.0, 55.0, 70.0, 85.0, 100.0, 115.0),
        n_doses=4,
    ),
}


def scenario_names() -> tuple:
    return tuple(_SCENARIOS)


def scenario(name: str) -> ScenarioSpec:
    """One of the named sampling designs: rich, sparse, noisy, multi."""
    try:
        return _SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {tuple(_SCENARIOS)}")


def covariate_family_eval(family: ParametricFamily, age) -> np.ndarray:
    """theta*(age) under a parametric family; ages must be finite and >= 0."""
    a = np.asarray(age, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("age must be finite and nonnegative")
    return family.theta_star(a)


@dataclass(frozen=True, eq=False)
class Dataset:
    """One simulated (or loaded) study: covariates, observations, design.

    ``model`` overrides the forward model, which is otherwise the PK model
    built from ``times`` and ``schedule``; it is not serialized.
    """

    ages: np.ndarray
    weights: np.ndarray
    y: np.ndarray
    times: np.ndarray
    sigma: float
    schedule: DosingSchedule = DosingSchedule()
    scenario: ScenarioSpec | None = None
    seed: int | None = None
    true_family: ParametricFamily | None = None
    model: object = None

    def __post_init__(self):
        for name in ("ages", "weights", "y", "times"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n, q = self.ages.shape[0], self.times.shape[0]
        if self.weights.shape != (n,) or self.y.shape != (n, q):
            raise ValueError("inconsistent dataset shapes")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def n(self) -> int:
        return self.ages.shape[0]

    @property
    def q(self) -> int:
        return self.times.shape[0]

    @property
    def forward_model(self):
        if self.model is not None:
            return self.model
        return PkModel(self.times, self.schedule)

    def with_y(self, y) -> "Dataset":
        return replace(self, y=np.asarray(y, dtype=float))


def simulate_dataset(
    spec: ScenarioSpec,
    family: ParametricFamily,
    seed,
    weight_model: WeightModel = WeightModel(),
    age_range: tuple = (0.0, 20.0),
) -> Dataset:
    """Simulate one dataset under a parametric truth.

    Ages are uniform on ``age_range``, weights follow ``weight_model``, and
    observations are the model's log concentrations plus iid Gaussian noise
    with standard deviation ``spec.sigma``.  Draw order (ages, weights,
    noise) is fixed, so a seed fully determines the dataset.
    """
    family.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    schedule = DosingSchedule(n_doses=spec.n_doses)
    model = PkModel(np.asarray(spec.times, dtype=float), schedule)
    ages = rng.uniform(age_range[0], age_range[1], spec.n)
    weights = weight_model.sample(ages, rng)
    clean = model.predict(family.theta_star(ages), weights)
    y = clean + spec.sigma * rng.standard_normal((spec.n, spec.q))
    return Dataset(
        ages=ages,
        weights=weights,
        y=y,
        times=model.times,
        sigma=spec.sigma,
        schedule=schedule,
        scenario=spec,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        true_family=family,
    )


def save_dataset(ds: Dataset, base_path: str) -> tuple:
    """Write ``<base>.csv`` (long format) and ``<base>.json`` (metadata)."""
    csv_path, json_path = base_path + ".csv", base_path + ".json"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual", "age_years", "weight_kg", "time_days", "log_conc"])
        for i in range(ds.n):
            for j in range(ds.q):
                writer.writerow(
                    [
                        i,
                        repr(float(ds.ages[i])),
                        repr(float(ds.weights[i])),
                        repr(float(ds.times[j])),
                        repr(float(ds.y[i, j])),
                    ]
                )
    meta = {
        "sigma": ds.sigma,
        "schedule": {
            "dose_per_kg": ds.schedule.dose_per_kg,
            "interval_days": ds.schedule.interval_days,
            "n_doses": ds.schedule.n_doses,
        },
        "seed": ds.seed,
        "scenario": None
        if ds.scenario is None
        else {
            "name": ds.scenario.name,
            "n": ds.scenario.n,
            "sigma": ds.scenario.sigma,
            "times": list(ds.scenario.times),
            "n_doses": ds.scenario.n_doses,
        },
        "true_family": None
        if ds.true_family is None
        else {"kind": ds.true_family.kind, "tau": list(ds.true_family.tau)},
    }
    with open(json_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return csv_path, json_path


def load_dataset(base_path: str) -> Dataset:
    """Inverse of :func:`save_dataset`."""
    with open(base_path + ".json") as fh:
        meta = json.load(fh)
    rows = {}
    with open(base_path + ".csv", newline="") as fh:
        for rec in csv.DictReader(fh):
            i = int(rec["individual"])
            rows.setdefault(i, []).append(rec)
    n = len(rows)
    times = np.array(sorted(float(r["time_days"]) for r in rows[0]))
    ages = np.empty(n)
    weights = np.empty(n)
    y = np.empty((n, times.shape[0]))
    for i in range(n):
        recs = sorted(rows[i], key=lambda r: float(r["time_days"]))
        ages[i] = float(recs[0]["age_years"])
        weights[i] = float(recs[0]["weight_kg"])
        y[i] = [float(r["log_conc"]) for r in recs]
    spec = None
    if meta.get("scenario"):
        s = meta["scenario"]
        spec = ScenarioSpec(s["name"], s["n"], s["sigma"], tuple(s["times"]), s["n_doses"])
    fam = None
    if meta.get("true_family"):
        fam = ParametricFamily(meta["true_family"]["kind"], tuple(meta["true_family"]["tau"]))
    return Dataset(
        ages=ages,
        weights=weights,
        y=y,
        times=times,
        sigma=meta["sigma"],
        schedule=DosingSchedule(**meta["schedule"]),
        scenario=spec,
        seed=meta.get("seed"),
        true_family=fam,
    )
