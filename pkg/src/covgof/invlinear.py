"""Linearized Tikhonov subproblems in the mixed coefficient representation.

Linearizing the observation operator at a base function f* = g* + h* turns
one outer iteration into a regularized linear least-squares problem for the
coefficients of the RKHS part:

    min_gamma ||ydagger - L M gamma||^2 + n * lam * gamma' D gamma,

where L stacks the per-individual Jacobians of the observation operator,
``ydagger_i = y_i - G(f*(x_i), x_i) + L_i h*(x_i)`` absorbs the expansion
point, and D, P, M come from the kernel's mixed representation.  The unique
stationary point solves

    (P' L' L M + n * lam * I) gamma = P' L' ydagger.

Observation rows are stacked per individual (i, m) -> i*q + m, function
values per component (l, i) -> l*n + i, matching the kernel operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .kernels import MixedOperators, RkhsCoefficients, eval_rkhs_function, train_values

__all__ = [
    "IdentityModel",
    "LinearizedProblem",
    "NumericsError",
    "linearize",
    "model_jacobian",
    "objective_gradient",
    "objective_value",
    "solve_linear_tikhonov",
]


class NumericsError(RuntimeError):
    """Linear solve failed or produced non-finite values."""


@dataclass(frozen=True)
class IdentityModel:
    """Observation operator G(theta, x) = theta; the direct problem on values."""

    p: int = 4

    @property
    def q(self) -> int:
        return self.p

    def predict(self, theta, weights=None) -> np.ndarray:
        return np.asarray(theta, dtype=float).reshape(-1, self.p)

    def jacobian(self, theta, weights=None) -> np.ndarray:
        n = np.asarray(theta).reshape(-1, self.p).shape[0]
        return np.broadcast_to(np.eye(self.p), (n, self.p, self.p)).copy()


def model_jacobian(model, theta, weights, relative_step: float = 1e-6) -> np.ndarray:
    """Per-individual Jacobians (n, q, p); analytic when the model has one."""
    jac = getattr(model, "jacobian", None)
    if jac is not None:
        return np.asarray(jac(theta, weights), dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, p = theta.shape
    cols = []
    for l in range(p):
        h = relative_step * np.maximum(1.0, np.abs(theta[:, l]))
        tp, tm = theta.copy(), theta.copy()
        tp[:, l] += h
        tm[:, l] -= h
        diff = (model.predict(tp, weights) - model.predict(tm, weights)) / (2.0 * h)[:, None]
        cols.append(diff)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class LinearizedProblem:
    """One linearized subproblem: Jacobians, shifted data, operators, penalty."""

    jacobians: np.ndarray
    ydagger: np.ndarray
    ops: MixedOperators
    lam: float

    def __post_init__(self):
        jac = np.asarray(self.jacobians, dtype=float)
        yd = np.asarray(self.ydagger, dtype=float).ravel()
        object.__setattr__(self, "jacobians", jac)
        object.__setattr__(self, "ydagger", yd)
        n, q, p = jac.shape
        if n != self.ops.n or p != self.ops.p:
            raise ValueError("jacobian shape does not match the kernel operators")
        if yd.shape[0] != n * q:
            raise ValueError("ydagger length must be n*q")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def n(self) -> int:
        return self.jacobians.shape[0]

    @property
    def q(self) -> int:
        return self.jacobians.shape[1]

    @property
    def p(self) -> int:
        return self.jacobians.shape[2]

    @cached_property
    def Lmat(self) -> np.ndarray:
        """Dense (n*q, n*p) operator; kept out of the solve's hot path."""
        n, q, p = self.jacobians.shape
        L = np.zeros((n * q, n * p))
        for i in range(n):
            for l in range(p):
                L[i * q:(i + 1) * q, l * n + i] = self.jacobians[i, :, l]
        return L

    @cached_property
    def LM(self) -> np.ndarray:
        """L M, shape (n*q, d)."""
        n, q, _ = self.jacobians.shape
        return np.einsum("iml,lid->imd", self.jacobians, self.ops.M3).reshape(n * q, -1)

    @cached_property
    def LP(self) -> np.ndarray:
        """L P, shape (n*q, d)."""
        n, q, _ = self.jacobians.shape
        return np.einsum("iml,lid->imd", self.jacobians, self.ops.P3).reshape(n * q, -1)


def linearize(model, dataset, base_parametric, base_rkhs, ops: MixedOperators, lam: float) -> LinearizedProblem:
    """Build the linearized subproblem at f* = base_parametric + base_rkhs.

    ``base_parametric`` may be None, an (n, p) array, a callable on ages, or
    an object with ``theta_star`` (a parametric family); ``base_rkhs`` is an
    :class:`RkhsCoefficients` or None.  Domain errors raised by the model at
    the expansion point propagate and carry the offending individual's index.
    """
    ages = np.asarray(dataset.ages, dtype=float)
    weights = np.asarray(dataset.weights, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    n, p = ages.shape[0], ops.p

    if base_parametric is None:
        g_vals = np.zeros((n, p))
    elif callable(getattr(base_parametric, "theta_star", None)):
        g_vals = base_parametric.theta_star(ages)
    elif callable(base_parametric):
        g_vals = np.asarray(base_parametric(ages), dtype=float)
    else:
        g_vals = np.asarray(base_parametric, dtype=float)
    if base_rkhs is None:
        h_vals = np.zeros((n, p))
    elif base_rkhs.train_ages.shape == ages.shape and np.array_equal(base_rkhs.train_ages, ages):
        h_vals = train_values(base_rkhs, ops)
    else:
        h_vals = eval_rkhs_function(base_rkhs, ages)

    f_vals = g_vals + h_vals
    pred = model.predict(f_vals, weights)
    jac = model_jacobian(model, f_vals, weights)
    ydagger = y - pred + np.einsum("imp,ip->im", jac, h_vals)
    return LinearizedProblem(jac, ydagger.ravel(), ops, lam)


def objective_value(prob: LinearizedProblem, gamma) -> float:
    """||ydagger - L M gamma||^2 + n * lam * gamma' D gamma."""
    gamma = np.asarray(gamma, dtype=float)
    resid = prob.ydagger - prob.LM @ gamma
    return float(resid @ resid + prob.n * prob.lam * (gamma @ prob.ops.D @ gamma))


def objective_gradient(prob: LinearizedProblem, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    return 2.0 * (prob.LM.T @ (prob.LM @ gamma - prob.ydagger)
                  + prob.n * prob.lam * (prob.ops.D @ gamma))


def solve_linear_tikhonov(prob: LinearizedProblem) -> RkhsCoefficients:
    """Closed-form minimizer of the linearized objective.

    Solves the d x d stationarity system by dense LU and checks the relative
    residual; failure raises :class:`NumericsError` with a condition estimate.
    """
    d = prob.ops.d
    A = prob.LP.T @ prob.LM + prob.n * prob.lam * np.eye(d)
    rhs = prob.LP.T @ prob.ydagger
    try:
        gamma = scipy.linalg.solve(A, rhs)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericsError(
            f"linear solve failed (cond ~ {np.linalg.cond(A):.3e}): {exc}"
        ) from exc
    if not np.all(np.isfinite(gamma)):
        raise NumericsError(
            f"linear solve produced non-finite coefficients (cond ~ {np.linalg.cond(A):.3e})"
        )
    resid = np.linalg.norm(A @ gamma - rhs)
    scale = np.linalg.norm(rhs) + np.linalg.norm(A, ord="fro") * np.linalg.norm(gamma)
    if resid > 1e-6 * max(scale, 1e-300):
        raise NumericsError(
            f"normal-equations residual {resid:.3e} too large "
            f"(cond ~ {np.linalg.cond(A):.3e})"
        )
    return RkhsCoefficients(gamma, prob.ops.spec, prob.ops.ages)
