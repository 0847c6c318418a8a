"""Parametric, nonparametric and combined estimators of the covariate model.

Three estimators of the individual parameter map ``f: age -> theta*``:

* ``fit_parametric``: Levenberg-Marquardt fit of a parametric family.
* ``fit_nonparametric``: staged RKHS fit of the full map.  Stage 1 fits a
  parametric family as a pilot; stage 2 solves the direct problem with the
  pilot's values as targets (a regularized projection into the RKHS); stage 3
  runs a fixed number of linearize-and-solve passes on the actual data;
  stage 4 polishes with quasi-Newton on the nonlinear Tikhonov objective.
* ``fit_combined``: parametric fit plus an RKHS deviation started at zero,
  with the same linearize-and-solve and quasi-Newton stages.

``fit_smoothed_parametric`` pushes a parametric fit through the RKHS
machinery by running the nonparametric stages on the fit's own noiseless
predictions; it is the parametric reference used by the smoothed test
statistics.

All RKHS objectives are ``sum_i ||y_i - G(f(x_i), x_i)||^2 + n*lam*||h||^2``.
A failed later stage degrades the fit to the last successful stage's
coefficients (``degraded=True``) instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .families import SATURABLE, ParametricFamily, default_start, family_dim
from .invlinear import NumericsError, linearize, solve_linear_tikhonov
from .kernels import (
    KernelSpec,
    MixedOperators,
    RkhsCoefficients,
    assemble_mixed_operators,
    eval_rkhs_function,
    kernel_spec_from_dict,
    kernel_spec_to_dict,
    rkhs_norm_sq,
)
from .optimize import SolverOptions, SolverReport, levenberg_marquardt, quasi_newton
from .pkmodel import PkDomainError

__all__ = [
    "FitOptions",
    "FitResult",
    "RkhsWorkspace",
    "fit_combined",
    "fit_nonparametric",
    "fit_parametric",
    "fit_result_from_dict",
    "fit_result_to_dict",
    "fit_smoothed_parametric",
    "make_workspace",
    "rkhs_objective",
]


@dataclass(frozen=True)
class FitOptions:
    """Stage controls for the RKHS estimators.

    At most ``niter`` linearize-and-solve passes run, stopping early once
    the relative objective change falls below ``rel_tol``;
    ``linearized``/``nonlinear`` toggle stages 3 and 4 (used by the
    algorithm benchmark).
    """

    niter: int = 10
    rel_tol: float = 1e-6
    lm: SolverOptions = SolverOptions()
    qn: SolverOptions = SolverOptions(max_iterations=500)
    linearized: bool = True
    nonlinear: bool = True


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted covariate model f = (parametric part) + (RKHS part)."""

    kind: str
    family: ParametricFamily | None
    rkhs: RkhsCoefficients | None
    lam: float | None
    objective: float
    stage_objectives: dict
    reports: dict
    degraded: bool
    train_theta: np.ndarray
    train_pred: np.ndarray

    def theta_star(self, ages) -> np.ndarray:
        """Fitted theta*(a) at arbitrary ages, shape (m, 4)."""
        a = np.atleast_1d(np.asarray(ages, dtype=float))
        vals = np.zeros((a.shape[0], 0))
        if self.family is not None:
            vals = self.family.theta_star(a)
        if self.rkhs is not None:
            rk = eval_rkhs_function(self.rkhs, a)
            vals = rk if vals.shape[1] == 0 else vals + rk
        return vals

    @property
    def rkhs_norm(self) -> float:
        """RKHS norm of the nonparametric part (0.0 if there is none)."""
        if self.rkhs is None:
            return 0.0
        return float(np.sqrt(max(rkhs_norm_sq(self.rkhs), 0.0)))


@dataclass(eq=False)
class RkhsWorkspace:
    """Precomputed per-covariate-set objects shared across repeated fits."""

    model: object
    ages: np.ndarray
    weights: np.ndarray
    ops: MixedOperators
    lam: float
    _direct_lu: tuple | None = field(default=None, repr=False)

    def direct_lu(self):
        """LU factors of the direct-problem system P'M + n*lam*I."""
        if self._direct_lu is None:
            A = self.ops.P.T @ self.ops.M + self.ops.n * self.lam * np.eye(self.ops.d)
            self._direct_lu = scipy.linalg.lu_factor(A)
        return self._direct_lu


def make_workspace(dataset, kernel: KernelSpec, lam: float, ops: MixedOperators | None = None) -> RkhsWorkspace:
    if not lam > 0:
        raise ValueError("lam must be positive")
    if ops is None:
        ops = assemble_mixed_operators(kernel, dataset.ages)
    return RkhsWorkspace(
        dataset.forward_model,
        np.asarray(dataset.ages, dtype=float),
        np.asarray(dataset.weights, dtype=float),
        ops,
        float(lam),
    )


def _direct_solve(ws: RkhsWorkspace, targets: np.ndarray) -> np.ndarray:
    """Regularized projection of per-covariate target values into the RKHS."""
    rhs = ws.ops.P.T @ np.asarray(targets, dtype=float).T.ravel()
    return scipy.linalg.lu_solve(ws.direct_lu(), rhs)


def fit_parametric(dataset, family_kind: str, tau0=None, options: SolverOptions | None = None) -> FitResult:
    """Least-squares fit of a parametric family by Levenberg-Marquardt.

    The fit is unconstrained; trial points where the model is undefined are
    rejected through non-finite residuals.  Non-convergence is reported via
    the solver report, not an exception.
    """
    model = dataset.forward_model
    ages = np.asarray(dataset.ages, dtype=float)
    weights = np.asarray(dataset.weights, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    nq = y.size
    start = np.asarray(tau0, dtype=float) if tau0 is not None else default_start(family_kind)
    if start.shape != (family_dim(family_kind),):
        raise ValueError(f"tau0 must have shape ({family_dim(family_kind)},)")

    def residual(tau):
        fam = ParametricFamily(family_kind, tau)
        try:
            pred = model.predict(fam.theta_star(ages), weights)
        except PkDomainError:
            return np.full(nq, np.inf)
        return (y - pred).ravel()

    def jac(tau):
        fam = ParametricFamily(family_kind, tau)
        try:
            mj = model.jacobian(fam.theta_star(ages), weights)
        except PkDomainError:
            return np.full((nq, start.shape[0]), np.nan)
        return -np.einsum("imp,ipk->imk", mj, fam.tau_jacobian(ages)).reshape(nq, -1)

    report = levenberg_marquardt(residual, start, jac=jac, options=options)
    fam = ParametricFamily(family_kind, report.x)
    train_theta = fam.theta_star(ages)
    try:
        train_pred = model.predict(train_theta, weights)
    except PkDomainError:
        train_pred = np.full_like(y, np.nan)
    return FitResult(
        kind="parametric",
        family=fam,
        rkhs=None,
        lam=None,
        objective=report.fun,
        stage_objectives={"parametric": report.fun},
        reports={"parametric": report},
        degraded=False,
        train_theta=train_theta,
        train_pred=train_pred,
    )


class _Obs:
    """Minimal dataset view for linearize()."""

    def __init__(self, ages, weights, y):
        self.ages, self.weights, self.y = ages, weights, y


def _make_objective(ws: RkhsWorkspace, y: np.ndarray, offset):
    """Nonlinear Tikhonov objective and gradient closures in gamma."""
    M3, D = ws.ops.M3, ws.ops.D
    nlam = ws.ops.n * ws.lam
    off = 0.0 if offset is None else offset

    def theta_of(gamma):
        return (M3 @ gamma).T + off

    def objective(gamma):
        try:
            pred = ws.model.predict(theta_of(gamma), ws.weights)
        except PkDomainError:
            return np.inf
        r = y - pred
        return float(np.sum(r * r) + nlam * (gamma @ D @ gamma))

    def gradient(gamma):
        theta = theta_of(gamma)
        pred = ws.model.predict(theta, ws.weights)
        jac = ws.model.jacobian(theta, ws.weights)
        gtheta = -2.0 * np.einsum("imp,im->ip", jac, y - pred)
        return np.einsum("lid,il->d", M3, gtheta) + 2.0 * nlam * (D @ gamma)

    return theta_of, objective, gradient


def rkhs_objective(workspace: RkhsWorkspace, y, offset_vals=None):
    """Objective and gradient closures of the nonlinear Tikhonov problem.

    For driving custom solvers (the algorithm benchmark) against exactly the
    objective the staged estimators minimize. ``offset_vals`` is an optional
    (n, p) parametric offset added to the RKHS part.
    """
    _, objective, gradient = _make_objective(
        workspace, np.asarray(y, dtype=float), offset_vals
    )
    return objective, gradient


def _run_rkhs_stages(ws, y, offset_vals, gamma0, first_stage, options: FitOptions):
    """Shared stages: linearize-and-solve passes, then quasi-Newton polish."""
    theta_of, objective, gradient = _make_objective(ws, y, offset_vals)
    obs = _Obs(ws.ages, ws.weights, y)
    gamma = np.asarray(gamma0, dtype=float)
    stage_objectives = {first_stage: objective(gamma)}
    reports: dict = {}
    degraded = False
    if options.linearized:
        # The passes are a fixed-point iteration without a line search, so
        # the stage returns the best iterate (including its input) rather
        # than blindly the last one.
        best_gamma, best_obj = gamma, objective(gamma)
        obj_prev = best_obj
        for _ in range(options.niter):
            base = RkhsCoefficients(gamma, ws.ops.spec, ws.ops.ages)
            try:
                prob = linearize(ws.model, obs, offset_vals, base, ws.ops, ws.lam)
                gamma = solve_linear_tikhonov(prob).gamma
            except (PkDomainError, NumericsError):
                degraded = True
                break
            obj_now = objective(gamma)
            if not np.isfinite(obj_now):
                # The pass left the model's domain; stop the stage early.
                break
            if obj_now < best_obj:
                best_gamma, best_obj = gamma, obj_now
            if abs(obj_prev - obj_now) <= options.rel_tol * max(1.0, abs(obj_prev)):
                break
            obj_prev = obj_now
        gamma = best_gamma
        stage_objectives["linearized"] = best_obj
    if options.nonlinear:
        if np.isfinite(objective(gamma)):
            rep = quasi_newton(objective, gamma, gradient, options.qn)
            gamma = rep.x
            reports["nonlinear"] = rep
        else:
            degraded = True
        stage_objectives["nonlinear"] = objective(gamma)
    return gamma, objective(gamma), stage_objectives, reports, degraded


def _finish_rkhs_fit(kind, ws, y, offset_family, offset_vals, gamma, objective,
                     stage_objectives, reports, degraded, lam):
    train_theta = (ws.ops.M3 @ gamma).T + (0.0 if offset_vals is None else offset_vals)
    try:
        train_pred = ws.model.predict(train_theta, ws.weights)
    except PkDomainError:
        train_pred = np.full_like(np.asarray(y, dtype=float), np.nan)
    return FitResult(
        kind=kind,
        family=offset_family,
        rkhs=RkhsCoefficients(gamma, ws.ops.spec, ws.ops.ages),
        lam=lam,
        objective=objective,
        stage_objectives=stage_objectives,
        reports=reports,
        degraded=degraded,
        train_theta=train_theta,
        train_pred=train_pred,
    )


def fit_nonparametric(
    dataset,
    kernel: KernelSpec,
    lam: float,
    init_family_kind: str = SATURABLE,
    tau0=None,
    options: FitOptions | None = None,
    workspace: RkhsWorkspace | None = None,
    init_fit: FitResult | None = None,
) -> FitResult:
    """Staged RKHS fit of the full covariate-to-parameter map.

    ``init_fit`` reuses an existing parametric fit for stage 1 (its fitted
    values seed the direct solve); otherwise ``init_family_kind``/``tau0``
    define the pilot fit.
    """
    options = options or FitOptions()
    ws = workspace or make_workspace(dataset, kernel, lam)
    y = np.asarray(dataset.y, dtype=float)
    if init_fit is None:
        init_fit = fit_parametric(dataset, init_family_kind, tau0, options.lm)
    reports = {"parametric": init_fit.reports.get("parametric")}
    gamma0 = _direct_solve(ws, init_fit.train_theta)
    gamma, obj, stage_obj, stage_reports, degraded = _run_rkhs_stages(
        ws, y, None, gamma0, "direct", options
    )
    reports.update(stage_reports)
    return _finish_rkhs_fit(
        "nonparametric", ws, y, None, None, gamma, obj, stage_obj, reports, degraded, ws.lam
    )


def fit_combined(
    dataset,
    family_kind: str,
    kernel: KernelSpec,
    lam: float,
    tau0=None,
    options: FitOptions | None = None,
    workspace: RkhsWorkspace | None = None,
    parametric_fit: FitResult | None = None,
) -> FitResult:
    """Parametric fit plus an RKHS deviation regularized toward zero.

    The parametric parameters are fixed after stage 1; only the deviation's
    coefficients are optimized, starting from zero.
    """
    options = options or FitOptions()
    ws = workspace or make_workspace(dataset, kernel, lam)
    y = np.asarray(dataset.y, dtype=float)
    if parametric_fit is None:
        parametric_fit = fit_parametric(dataset, family_kind, tau0, options.lm)
    fam = parametric_fit.family
    offset_vals = fam.theta_star(ws.ages)
    reports = {"parametric": parametric_fit.reports.get("parametric")}
    gamma0 = np.zeros(ws.ops.d)
    gamma, obj, stage_obj, stage_reports, degraded = _run_rkhs_stages(
        ws, y, offset_vals, gamma0, "zero_deviation", options
    )
    reports.update(stage_reports)
    return _finish_rkhs_fit(
        "combined", ws, y, fam, offset_vals, gamma, obj, stage_obj, reports, degraded, ws.lam
    )


def fit_smoothed_parametric(
    dataset,
    parametric_fit: FitResult,
    kernel: KernelSpec,
    lam: float,
    options: FitOptions | None = None,
    workspace: RkhsWorkspace | None = None,
) -> FitResult:
    """Parametric fit pushed through the RKHS stages.

    Runs the nonparametric stages on the parametric fit's own noiseless
    predictions, so the result carries the same regularization bias as a
    nonparametric fit; used as the reference side of the smoothed statistics.
    """
    artificial = dataset.with_y(parametric_fit.train_pred)
    fit = fit_nonparametric(
        artificial, kernel, lam,
        options=options, workspace=workspace, init_fit=parametric_fit,
    )
    return replace(fit, kind="smoothed_parametric")


def fit_result_to_dict(fit: FitResult) -> dict:
    """JSON-ready summary; solver reports are reduced to their diagnostics."""
    out = {
        "kind": fit.kind,
        "lam": fit.lam,
        "objective": fit.objective,
        "degraded": fit.degraded,
        "stage_objectives": {k: float(v) for k, v in fit.stage_objectives.items()},
        "family": None if fit.family is None else {
            "kind": fit.family.kind, "tau": list(fit.family.tau)
        },
        "rkhs": None if fit.rkhs is None else {
            "gamma": fit.rkhs.gamma.tolist(),
            "spec": kernel_spec_to_dict(fit.rkhs.spec),
            "train_ages": fit.rkhs.train_ages.tolist(),
        },
        "train_theta": fit.train_theta.tolist(),
        "train_pred": fit.train_pred.tolist(),
        "reports": {
            k: None if r is None else {
                "fun": float(r.fun),
                "iterations": r.iterations,
                "converged": bool(r.converged),
                "message": r.message,
            }
            for k, r in fit.reports.items()
        },
    }
    return out


def fit_result_from_dict(data: dict) -> FitResult:
    """Rebuild a fit from :func:`fit_result_to_dict` output.

    Solver reports come back as plain diagnostic dicts.
    """
    fam = None
    if data.get("family"):
        fam = ParametricFamily(data["family"]["kind"], tuple(data["family"]["tau"]))
    rk = None
    if data.get("rkhs"):
        rk = RkhsCoefficients(
            np.asarray(data["rkhs"]["gamma"], dtype=float),
            kernel_spec_from_dict(data["rkhs"]["spec"]),
            np.asarray(data["rkhs"]["train_ages"], dtype=float),
        )
    return FitResult(
        kind=data["kind"],
        family=fam,
        rkhs=rk,
        lam=data.get("lam"),
        objective=float(data["objective"]),
        stage_objectives=dict(data.get("stage_objectives", {})),
        reports=dict(data.get("reports", {})),
        degraded=bool(data.get("degraded", False)),
        train_theta=np.asarray(data["train_theta"], dtype=float),
        train_pred=np.asarray(data["train_pred"], dtype=float),
    )
