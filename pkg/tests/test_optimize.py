"""Solver tests on problems with known minimizers."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from covgof.optimize import (
    SolverOptions,
    finite_diff_gradient,
    finite_diff_jacobian,
    levenberg_marquardt,
    quasi_newton,
    simulated_annealing,
)


def linear_problem(seed=0, m=12, k=4):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, k))
    b = rng.normal(size=m)
    x_star = np.linalg.lstsq(A, b, rcond=None)[0]
    return A, b, x_star


def test_lm_solves_linear_least_squares():
    A, b, x_star = linear_problem(1)
    report = levenberg_marquardt(lambda x: A @ x - b, np.zeros(4), jac=lambda x: A)
    assert report.converged
    assert_allclose(report.x, x_star, rtol=1e-8, atol=1e-10)
    r = A @ report.x - b
    assert_allclose(report.fun, float(r @ r), rtol=1e-12)


def test_lm_valley():
    def residual(x):
        return np.array([1.0 - x[0], 10.0 * (x[1] - x[0] ** 2)])

    report = levenberg_marquardt(residual, np.array([-1.2, 1.0]))
    assert report.converged
    assert_allclose(report.x, [1.0, 1.0], atol=1e-6)
    assert report.fun < 1e-14


def test_lm_fd_jacobian_agrees_with_analytic():
    def residual(x):
        return np.array([np.exp(0.3 * x[0]) - 2.0, x[0] * x[1] - 1.0, x[1] ** 2 - 0.5])

    with_fd = levenberg_marquardt(residual, np.array([1.0, 1.0]))
    def jac(x):
        return np.array([
            [0.3 * np.exp(0.3 * x[0]), 0.0],
            [x[1], x[0]],
            [0.0, 2.0 * x[1]],
        ])
    with_an = levenberg_marquardt(residual, np.array([1.0, 1.0]), jac=jac)
    assert_allclose(with_fd.x, with_an.x, rtol=1e-6)


def test_lm_recovers_from_nonfinite_region():
    """A trial step into the infeasible region is rejected, not fatal."""

    def residual(x):
        if x[0] <= 0.0:
            return np.array([np.inf])
        return np.array([1.0 / x[0] - 1.0])

    report = levenberg_marquardt(residual, np.array([3.0]))
    assert report.converged
    assert_allclose(report.x, [1.0], rtol=1e-7)


def test_lm_rejects_nonfinite_start():
    with pytest.raises(ValueError):
        levenberg_marquardt(lambda x: np.array([np.nan]), np.array([0.0]))


def test_lm_iteration_budget():
    A, b, _ = linear_problem(2)
    report = levenberg_marquardt(
        lambda x: A @ x - b, np.zeros(4), options=SolverOptions(max_iterations=1)
    )
    assert report.iterations == 1
    assert not report.converged


def test_qn_quadratic():
    rng = np.random.default_rng(3)
    R = rng.normal(size=(5, 5))
    Q = R @ R.T + 5.0 * np.eye(5)
    b = rng.normal(size=5)

    def f(x):
        return 0.5 * x @ Q @ x - b @ x

    def g(x):
        return Q @ x - b

    x_star = np.linalg.solve(Q, b)
    assert_allclose(finite_diff_gradient(f, np.ones(5)), g(np.ones(5)), rtol=1e-6)
    report = quasi_newton(f, np.zeros(5), gradient=g)
    assert report.converged
    assert_allclose(report.x, x_star, rtol=1e-6, atol=1e-9)


def test_qn_matches_lm_on_least_squares():
    A, b, x_star = linear_problem(4)

    def f(x):
        r = A @ x - b
        return float(r @ r)

    def g(x):
        return 2.0 * A.T @ (A @ x - b)

    report = quasi_newton(f, np.zeros(4), gradient=g,
                          options=SolverOptions(gradient_tolerance=1e-10))
    assert_allclose(report.x, x_star, rtol=1e-6, atol=1e-9)


def test_qn_fd_gradient_fallback():
    report = quasi_newton(lambda x: float((x[0] - 2.0) ** 2 + (x[1] + 1.0) ** 2),
                          np.zeros(2))
    assert_allclose(report.x, [2.0, -1.0], atol=1e-5)


def test_qn_rejects_nonfinite_start():
    with pytest.raises(ValueError):
        quasi_newton(lambda x: np.inf, np.array([0.0]))


def test_annealing_improves_and_is_seeded():
    def f(x):
        return float(np.sum((x - 3.0) ** 2))

    x0 = np.full(3, -4.0)
    opts = SolverOptions(seed=11, max_iterations=60)
    rep1 = simulated_annealing(f, x0, options=opts)
    rep2 = simulated_annealing(f, x0, options=opts)
    rep3 = simulated_annealing(f, x0, options=SolverOptions(seed=12, max_iterations=60))
    assert rep1.fun < f(x0)
    assert not rep1.converged
    assert_array_equal(rep1.x, rep2.x)
    assert rep1.fun == rep2.fun
    assert not np.array_equal(rep1.x, rep3.x)


def test_annealing_skips_nonfinite_proposals():
    def f(x):
        if abs(x[0]) > 2.0:
            return np.inf
        return float(x[0] ** 2)

    rep = simulated_annealing(f, np.array([1.5]), options=SolverOptions(seed=0, max_iterations=30))
    assert np.isfinite(rep.fun)
    assert abs(rep.x[0]) <= 2.0


def test_finite_diff_jacobian_linear_exact():
    A, b, _ = linear_problem(6, m=7, k=3)
    J = finite_diff_jacobian(lambda x: A @ x - b, np.ones(3))
    assert_allclose(J, A, rtol=1e-8, atol=1e-9)


def test_report_fields():
    A, b, _ = linear_problem(7)
    rep = levenberg_marquardt(lambda x: A @ x - b, np.zeros(4), jac=lambda x: A)
    assert rep.iterations >= 1
    assert rep.elapsed_s >= 0.0
    assert isinstance(rep.message, str) and rep.message
