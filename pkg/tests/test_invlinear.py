"""Closed-form regularized solves checked against generic minimization."""

from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from covgof.invlinear import (
    LinearizedProblem,
    NumericsError,
    linearize,
    objective_gradient,
    objective_value,
    solve_linear_tikhonov,
)
from covgof.kernels import (
    RkhsCoefficients,
    assemble_mixed_operators,
    constant_kernel,
    gaussian_kernel,
    kernel_spec,
    maturation_kernel,
    polynomial_kernel,
    train_values,
)
from covgof.optimize import SolverOptions, quasi_newton
from covgof.pkmodel import PkDomainError, PkModel


class LinearModel:
    """Observation operator G(theta_i) = B_i theta_i; exactly linear."""

    def __init__(self, B):
        self.B = np.asarray(B, dtype=float)

    def predict(self, theta, weights):
        return np.einsum("iqp,ip->iq", self.B, np.asarray(theta, dtype=float))

    def jacobian(self, theta, weights):
        return self.B


def random_instance(rng, n=None, p=None, q=None):
    n = n or rng.integers(3, 9)
    p = p or rng.integers(1, 4)
    q = q or rng.integers(1, 5)
    ages = rng.uniform(0.0, 20.0, n)
    pool = [gaussian_kernel(rng.uniform(1.0, 5.0)), constant_kernel(),
            polynomial_kernel(2)]
    comps = tuple(pool[rng.integers(0, len(pool))] for _ in range(p))
    spec = kernel_spec(comps)
    ops = assemble_mixed_operators(spec, ages)
    B = rng.normal(size=(n, q, p))
    y = rng.normal(size=n * q)
    lam = float(10.0 ** rng.uniform(-4, 0))
    return LinearizedProblem(B, y, ops, lam)


def test_closed_form_matches_quasi_newton():
    rng = np.random.default_rng(2024)
    for _ in range(6):
        prob = random_instance(rng)
        gamma_cf = solve_linear_tikhonov(prob).gamma
        rep = quasi_newton(
            lambda g: objective_value(prob, g),
            np.zeros(prob.ops.d),
            gradient=lambda g: objective_gradient(prob, g),
            options=SolverOptions(gradient_tolerance=1e-12, max_iterations=5000),
        )
        v_cf = objective_value(prob, gamma_cf)
        v_qn = objective_value(prob, rep.x)
        assert abs(v_cf - v_qn) <= 1e-7
        assert v_cf <= v_qn + 1e-9
        grad = objective_gradient(prob, gamma_cf)
        assert np.linalg.norm(grad) <= 1e-8 * (1.0 + np.linalg.norm(gamma_cf))


def test_identity_model_reduces_to_kernel_ridge():
    """With G = identity and an all-dual kernel the solve is plain ridge."""
    rng = np.random.default_rng(5)
    n, p = 7, 2
    ages = rng.uniform(0.0, 20.0, n)
    spec = kernel_spec(
        (gaussian_kernel(2.0), gaussian_kernel(4.0)), dual={0, 1}
    )
    ops = assemble_mixed_operators(spec, ages)
    B = np.broadcast_to(np.eye(p), (n, p, p)).copy()
    y = rng.normal(size=(n, p))
    lam = 0.05
    prob = LinearizedProblem(B, y.ravel(), ops, lam)
    gamma = solve_linear_tikhonov(prob).gamma
    for l in range(p):
        K = ops.D[ops.slices[l], ops.slices[l]]
        want = np.linalg.solve(K + n * lam * np.eye(n), y[:, l])
        assert_allclose(gamma[ops.slices[l]], want, rtol=1e-10, atol=1e-12)


def test_dual_and_mixed_representations_agree():
    """Constants represented dually (block size n) give the same fit."""
    rng = np.random.default_rng(9)
    n = 8
    ages = rng.uniform(0.0, 20.0, n)
    comps = (gaussian_kernel(2.5), constant_kernel(), constant_kernel(), constant_kernel())
    mixed = kernel_spec(comps)
    full_dual = kernel_spec(comps, dual={0, 1, 2, 3})
    ops_m = assemble_mixed_operators(mixed, ages)
    ops_d = assemble_mixed_operators(full_dual, ages)
    assert ops_m.d == n + 3
    assert ops_d.d == 4 * n
    B = rng.normal(size=(n, 3, 4))
    y = rng.normal(size=n * 3)
    lam = 0.02
    sol_m = solve_linear_tikhonov(LinearizedProblem(B, y, ops_m, lam))
    sol_d = solve_linear_tikhonov(LinearizedProblem(B, y, ops_d, lam))
    theta_m = train_values(sol_m, ops_m)
    theta_d = train_values(sol_d, ops_d)
    assert_allclose(theta_d, theta_m, rtol=0.0, atol=1e-7 * (1.0 + np.abs(theta_m).max()))


def test_block_operator_matches_dense_construction():
    rng = np.random.default_rng(11)
    prob = random_instance(rng, n=5, p=3, q=2)
    L = prob.Lmat
    assert_allclose(prob.LM, L @ prob.ops.M, rtol=1e-13, atol=1e-13)
    assert_allclose(prob.LP, L @ prob.ops.P, rtol=1e-13, atol=1e-13)
    # L itself: row block i holds the i-th Jacobian in the i-th column slots
    n, q, p = prob.jacobians.shape
    for i in range(n):
        for l in range(p):
            col = L[i * q:(i + 1) * q, l * n + i]
            assert_allclose(col, prob.jacobians[i, :, l], rtol=0, atol=0)


def test_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    prob = random_instance(rng, n=4, p=2, q=3)
    gamma = rng.normal(size=prob.ops.d)
    grad = objective_gradient(prob, gamma)
    fd = np.empty_like(grad)
    h = 1e-6
    for j in range(gamma.size):
        gp, gm = gamma.copy(), gamma.copy()
        gp[j] += h
        gm[j] -= h
        fd[j] = (objective_value(prob, gp) - objective_value(prob, gm)) / (2 * h)
    assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)


def test_norm_shrinks_with_lambda():
    rng = np.random.default_rng(17)
    n = 6
    ages = rng.uniform(0.0, 20.0, n)
    ops = assemble_mixed_operators(maturation_kernel(), ages)
    B = rng.normal(size=(n, 2, 4))
    y = rng.normal(size=n * 2)
    norms = []
    for lam in (1e-4, 1e-2, 1.0, 1e2):
        g = solve_linear_tikhonov(LinearizedProblem(B, y, ops, lam)).gamma
        norms.append(float(g @ ops.D @ g))
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_linearize_base_variants_consistent():
    """Family object, array and callable bases produce the same subproblem."""
    times = np.array([1.0, 5.0])
    model = PkModel(times)
    rng = np.random.default_rng(23)
    n = 5
    ages = rng.uniform(0.5, 19.0, n)
    weights = rng.uniform(10.0, 80.0, n)
    y = rng.normal(size=(n, 2))
    data = SimpleNamespace(ages=ages, weights=weights, y=y)
    ops = assemble_mixed_operators(maturation_kernel(), ages)

    from covgof import reference_family

    fam = reference_family()
    base_arr = fam.theta_star(ages)
    p1 = linearize(model, data, fam, None, ops, 0.1)
    p2 = linearize(model, data, base_arr, None, ops, 0.1)
    p3 = linearize(model, data, lambda a: fam.theta_star(a), None, ops, 0.1)
    assert_allclose(p1.ydagger, p2.ydagger, rtol=1e-12)
    assert_allclose(p1.jacobians, p3.jacobians, rtol=1e-12)

    coeffs = RkhsCoefficients(
        1e-3 * rng.normal(size=ops.d), maturation_kernel(), ages
    )
    p4 = linearize(model, data, fam, coeffs, ops, 0.1)
    h_vals = train_values(coeffs, ops)
    want = (y - model.predict(base_arr + h_vals, weights)
            + np.einsum("imp,ip->im", p4.jacobians, h_vals)).ravel()
    assert_allclose(p4.ydagger, want, rtol=1e-10, atol=1e-12)


def test_linearize_domain_error_carries_index():
    times = np.array([1.0])
    model = PkModel(times)
    ages = np.array([1.0, 2.0])
    weights = np.array([20.0, 30.0])
    y = np.zeros((2, 1))
    data = SimpleNamespace(ages=ages, weights=weights, y=y)
    ops = assemble_mixed_operators(maturation_kernel(), ages)
    base = np.array([[0.1, 3.0, 0.8, 2.0], [-0.5, 3.0, 0.8, 2.0]])
    with pytest.raises(PkDomainError) as err:
        linearize(model, data, base, None, ops, 0.1)
    assert err.value.index == 1


def test_validation_errors():
    rng = np.random.default_rng(29)
    prob = random_instance(rng, n=4, p=2, q=2)
    with pytest.raises(ValueError):
        LinearizedProblem(prob.jacobians, prob.ydagger[:-1], prob.ops, 0.1)
    with pytest.raises(ValueError):
        LinearizedProblem(prob.jacobians, prob.ydagger, prob.ops, 0.0)
    with pytest.raises(ValueError):
        LinearizedProblem(prob.jacobians[:, :, :1], prob.ydagger, prob.ops, 0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflowing_system_raises():
    """Jacobians large enough to overflow the normal equations are rejected."""
    n = 3
    ages = np.array([1.0, 2.0, 3.0])
    spec = kernel_spec((gaussian_kernel(1.0),))
    ops = assemble_mixed_operators(spec, ages)
    B = np.full((n, 1, 1), 1e200)
    y = np.ones(n)
    prob = LinearizedProblem(B, y, ops, 0.1)
    with pytest.raises(NumericsError):
        solve_linear_tikhonov(prob)
