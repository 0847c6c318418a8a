"""Deterministic small-scale optimizers used by the estimators.

All solvers return a :class:`SolverReport` and never raise on numerical
trouble past the initial point: trial points with non-finite values are
treated as rejected steps (increased damping, shorter line-search step, or a
rejected annealing move).  Given identical inputs, options and seed, the
returned report is bitwise reproducible except for the wall time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SolverOptions",
    "SolverReport",
    "finite_diff_gradient",
    "finite_diff_jacobian",
    "levenberg_marquardt",
    "quasi_newton",
    "simulated_annealing",
]


@dataclass(frozen=True)
class SolverOptions:
    """Shared option set; ``max_iterations=None`` picks the solver's default
    (500 Levenberg-Marquardt iterations, 2000 quasi-Newton iterations, 100
    annealing temperature stages)."""

    max_iterations: int | None = None
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    initial_damping: float = 1e-3
    fd_relative_step: float = 1e-6
    temperature_start: float = 1.0
    temperature_decay: float = 0.9
    moves_per_temperature: int = 20
    proposal_scale: float = 0.1
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SolverReport:
    """Outcome of one solver run; ``fun`` is the final objective (sum of
    squared residuals for Levenberg-Marquardt)."""

    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    elapsed_s: float
    message: str


def finite_diff_gradient(f, x, relative_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient with per-component step rel*max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.shape[0])
    for j in range(x.shape[0]):
        h = relative_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite objective when perturbing component {j}")
        g[j] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_jacobian(residual, x, relative_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector residual, shape (m, k)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[0]):
        h = relative_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        rp, rm = residual(xp), residual(xm)
        if not (np.all(np.isfinite(rp)) and np.all(np.isfinite(rm))):
            raise ValueError(f"non-finite residual when perturbing component {j}")
        cols.append((np.asarray(rp) - np.asarray(rm)) / (2.0 * h))
    return np.stack(cols, axis=1)


def _ssr(r) -> float:
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(r @ r)


def levenberg_marquardt(residual, x0, jac=None, options: SolverOptions | None = None) -> SolverReport:
    """Minimize ||residual(x)||^2.

    Damping is multiplied by 3 on a rejected step and divided by 3 on an
    accepted one, starting from ``initial_damping``.  A trial point with
    non-finite residuals counts as a rejection.  ``converged`` is set only by
    the gradient criterion ||J'r||_inf < gradient_tolerance.
    """
    opts = options or SolverOptions()
    max_iter = opts.max_iterations if opts.max_iterations is not None else 500
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    k = x.shape[0]
    r = np.asarray(residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the initial point")
    ssr = float(r @ r)
    mu = opts.initial_damping
    jac_fn = jac if jac is not None else (
        lambda xx: finite_diff_jacobian(residual, xx, opts.fd_relative_step)
    )
    converged = False
    message = "maximum iterations reached"
    iterations = 0
    for it in range(max_iter):
        J = np.asarray(jac_fn(x), dtype=float)
        if not np.all(np.isfinite(J)):
            message = "jacobian not finite at current point"
            break
        g = J.T @ r
        if np.max(np.abs(g)) < opts.gradient_tolerance:
            converged = True
            message = "gradient below tolerance"
            break
        JtJ = J.T @ J
        accepted = False
        delta = None
        for _ in range(25):
            try:
                delta = np.linalg.solve(JtJ + mu * np.eye(k), -g)
            except np.linalg.LinAlgError:
                mu *= 3.0
                continue
            x_trial = x + delta
            r_trial = np.asarray(residual(x_trial), dtype=float)
            ssr_trial = _ssr(r_trial)
            if ssr_trial < ssr:
                x, r, ssr = x_trial, r_trial, ssr_trial
                mu = max(mu / 3.0, 1e-15)
                accepted = True
                break
            mu *= 3.0
        iterations = it + 1
        if not accepted:
            message = "damping exhausted without an acceptable step"
            break
        if np.linalg.norm(delta) <= opts.step_tolerance * (1.0 + np.linalg.norm(x)):
            message = "step size below tolerance"
            break
    return SolverReport(x, ssr, iterations, converged, time.perf_counter() - t0, message)


def quasi_newton(objective, x0, gradient=None, options: SolverOptions | None = None) -> SolverReport:
    """BFGS with backtracking line search (Armijo c = 1e-4, shrink 0.5).

    Accepted steps are monotone in the objective; non-finite trial values
    shorten the step.  ``converged`` means ||grad||_inf < gradient_tolerance.
    """
    opts = options or SolverOptions()
    max_iter = opts.max_iterations if opts.max_iterations is not None else 2000
    t0 = time.perf_counter()
    grad_fn = gradient if gradient is not None else (
        lambda xx: finite_diff_gradient(objective, xx, opts.fd_relative_step)
    )
    x = np.array(x0, dtype=float)
    k = x.shape[0]
    fx = float(objective(x))
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the initial point")
    g = np.asarray(grad_fn(x), dtype=float)
    H = np.eye(k)
    converged = False
    message = "maximum iterations reached"
    iterations = 0
    c1 = 1e-4
    for it in range(max_iter):
        if np.max(np.abs(g)) < opts.gradient_tolerance:
            converged = True
            message = "gradient below tolerance"
            break
        p = -H @ g
        slope = float(p @ g)
        if not np.isfinite(slope) or slope >= 0.0:
            H = np.eye(k)
            p = -g
            slope = float(p @ g)
        step = 1.0
        x_new = f_new = None
        for _ in range(60):
            xt = x + step * p
            ft = float(objective(xt))
            if np.isfinite(ft) and ft <= fx + c1 * step * slope:
                x_new, f_new = xt, ft
                break
            step *= 0.5
        iterations = it + 1
        if x_new is None:
            message = "line search failed"
            break
        g_new = np.asarray(grad_fn(x_new), dtype=float)
        s = x_new - x
        yk = g_new - g
        sy = float(s @ yk)
        if np.isfinite(sy) and sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yk):
            rho = 1.0 / sy
            V = np.eye(k) - rho * np.outer(s, yk)
            H = V @ H @ V.T + rho * np.outer(s, s)
        stalled = np.linalg.norm(s) <= opts.step_tolerance * (1.0 + np.linalg.norm(x))
        x, fx, g = x_new, f_new, g_new
        if stalled:
            if np.max(np.abs(g)) < opts.gradient_tolerance:
                converged = True
                message = "gradient below tolerance"
            else:
                message = "step size below tolerance"
            break
    return SolverReport(x, fx, iterations, converged, time.perf_counter() - t0, message)


def simulated_annealing(objective, x0, options: SolverOptions | None = None) -> SolverReport:
    """Seeded annealing with Gaussian proposals and geometric cooling.

    Proposals perturb each component by ``proposal_scale * max(1, |x_j|)``
    times a standard normal; moves that increase the objective are accepted
    with the Metropolis probability at the current temperature.  The best
    visited point is returned; ``converged`` is always False since no
    gradient criterion applies.
    """
    opts = options or SolverOptions()
    stages = opts.max_iterations if opts.max_iterations is not None else 100
    t0 = time.perf_counter()
    rng = np.random.default_rng(opts.seed)
    x = np.array(x0, dtype=float)
    fx = float(objective(x))
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the initial point")
    best_x, best_f = x.copy(), fx
    T = opts.temperature_start
    evals = 0
    for _ in range(stages):
        for _ in range(opts.moves_per_temperature):
            scale = opts.proposal_scale * np.maximum(1.0, np.abs(x))
            prop = x + scale * rng.standard_normal(x.shape[0])
            fp = float(objective(prop))
            evals += 1
            if not np.isfinite(fp):
                continue
            if fp < fx or rng.uniform() < np.exp(-(fp - fx) / T):
                x, fx = prop, fp
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
        T *= opts.temperature_decay
    return SolverReport(
        best_x, best_f, evals, False, time.perf_counter() - t0, "annealing schedule completed"
    )
