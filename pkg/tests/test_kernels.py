"""Kernel assembly tests against brute-force constructions."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from covgof.kernels import (
    DEFAULT_BANDWIDTH_YEARS,
    FeatureSpec,
    KernelSpec,
    RkhsCoefficients,
    assemble_kernel_matrix,
    assemble_mixed_operators,
    canonical,
    clearance_only_kernel,
    constant_kernel,
    eval_dual_function,
    eval_rkhs_function,
    eval_scalar_kernel,
    gaussian_kernel,
    kernel_spec,
    kernel_spec_from_dict,
    kernel_spec_to_dict,
    maturation_kernel,
    polynomial_kernel,
    rkhs_norm_sq,
    scalar_kernel_matrix,
    to_dual_coefficients,
    train_values,
    zero_kernel,
)


def mixed_spec():
    """A kernel exercising every block type at once."""
    return kernel_spec(
        (gaussian_kernel(2.0), polynomial_kernel(3), constant_kernel(), zero_kernel())
    )


def test_default_bandwidth():
    assert_allclose(DEFAULT_BANDWIDTH_YEARS, 700.0 / 365.25, rtol=1e-15)


def test_gaussian_values():
    k = gaussian_kernel(2.0)
    assert eval_scalar_kernel(k, 3.0, 3.0) == 1.0
    assert_allclose(eval_scalar_kernel(k, 1.0, 3.0), np.exp(-0.5), rtol=1e-15)
    assert_allclose(
        eval_scalar_kernel(k, 1.0, 3.0), eval_scalar_kernel(k, 3.0, 1.0), rtol=1e-15
    )


def test_scalar_matrix_matches_pointwise():
    ages = np.array([0.3, 2.0, 7.5, 19.0])
    others = np.array([1.0, 6.0])
    for k in (gaussian_kernel(1.5), constant_kernel(), zero_kernel(), polynomial_kernel(2)):
        mat = scalar_kernel_matrix(k, ages, others)
        want = np.array([[eval_scalar_kernel(k, a, b) for b in others] for a in ages])
        assert_allclose(mat, want, rtol=1e-14, atol=0.0)


def test_block_diagonal_assembly():
    spec = mixed_spec()
    ages = np.array([0.5, 4.0, 11.0])
    n, p = ages.shape[0], spec.p
    K = assemble_kernel_matrix(spec, ages)
    assert K.shape == (n * p, n * p)
    for l, comp in enumerate(spec.components):
        block = K[l * n:(l + 1) * n, l * n:(l + 1) * n]
        assert_allclose(block, scalar_kernel_matrix(comp, ages), rtol=1e-14)
    off = K.copy()
    for l in range(p):
        off[l * n:(l + 1) * n, l * n:(l + 1) * n] = 0.0
    assert_array_equal(off, np.zeros_like(K))


def test_kernel_matrix_positive_semidefinite():
    rng = np.random.default_rng(12)
    for spec in (maturation_kernel(), mixed_spec()):
        for _ in range(5):
            ages = rng.uniform(0.0, 20.0, 30)
            K = assemble_kernel_matrix(spec, ages)
            ev = np.linalg.eigvalsh((K + K.T) / 2)
            assert ev.min() >= -1e-10 * max(1.0, ev.max())


def test_coefficient_dimensions():
    n = 17
    assert maturation_kernel().mixed_dim(n) == n + 3
    assert clearance_only_kernel().mixed_dim(n) == n
    assert mixed_spec().block_dims(n) == [n, 3, 1, 0]


def test_operator_identities():
    spec = mixed_spec()
    ages = np.array([0.5, 4.0, 11.0, 16.0])
    ops = assemble_mixed_operators(spec, ages)
    assert_allclose(ops.M, ops.P @ ops.D, rtol=1e-14, atol=1e-14)
    n = ages.shape[0]
    # dual block: P is the identity, M the Gram matrix, D the Gram matrix
    sl = ops.slices[0]
    assert_array_equal(ops.P[:n, sl], np.eye(n))
    assert_allclose(ops.D[sl, sl], scalar_kernel_matrix(spec.components[0], ages))
    # primal block: D is the identity, P the feature matrix
    sl = ops.slices[1]
    phi = canonical(spec.components[1]).feature.evaluate(ages)
    assert_array_equal(ops.D[sl, sl], np.eye(3))
    assert_allclose(ops.P[n:2 * n, sl], phi)


def test_train_values_match_pointwise_evaluation():
    spec = mixed_spec()
    rng = np.random.default_rng(3)
    ages = rng.uniform(0.0, 20.0, 6)
    ops = assemble_mixed_operators(spec, ages)
    gamma = rng.normal(size=ops.d)
    coeffs = RkhsCoefficients(gamma, spec, ages)
    assert_allclose(
        train_values(coeffs, ops), eval_rkhs_function(coeffs, ages), rtol=1e-12, atol=1e-12
    )


def test_zero_component_is_identically_zero():
    spec = clearance_only_kernel()
    rng = np.random.default_rng(8)
    ages = rng.uniform(0.0, 20.0, 5)
    coeffs = RkhsCoefficients(rng.normal(size=5), spec, ages)
    vals = eval_rkhs_function(coeffs, np.linspace(0, 20, 9))
    assert_array_equal(vals[:, 1:], np.zeros((9, 3)))
    assert np.any(vals[:, 0] != 0.0)


def test_norm_quadratic_form():
    spec = mixed_spec()
    rng = np.random.default_rng(5)
    ages = rng.uniform(0.0, 20.0, 7)
    ops = assemble_mixed_operators(spec, ages)
    gamma = rng.normal(size=ops.d)
    coeffs = RkhsCoefficients(gamma, spec, ages)
    want = float(gamma @ ops.D @ gamma)
    assert_allclose(rkhs_norm_sq(coeffs), want, rtol=1e-12)
    assert_allclose(rkhs_norm_sq(coeffs, ops), want, rtol=1e-15)


def test_scalar_age_evaluation():
    spec = maturation_kernel()
    rng = np.random.default_rng(2)
    ages = rng.uniform(0.0, 20.0, 4)
    coeffs = RkhsCoefficients(rng.normal(size=7), spec, ages)
    grid = eval_rkhs_function(coeffs, [3.0])
    single = eval_rkhs_function(coeffs, 3.0)
    assert single.shape == (4,)
    assert_array_equal(single, grid[0])


def test_dual_conversion_preserves_function():
    spec = maturation_kernel()
    rng = np.random.default_rng(4)
    ages = rng.uniform(0.0, 20.0, 6)
    ops = assemble_mixed_operators(spec, ages)
    coeffs = RkhsCoefficients(rng.normal(size=ops.d), spec, ages)
    alpha = to_dual_coefficients(coeffs, ops)
    grid = np.linspace(0.0, 20.0, 15)
    assert_allclose(
        eval_dual_function(spec, ages, alpha, grid),
        eval_rkhs_function(coeffs, grid),
        rtol=1e-10, atol=1e-12,
    )


def test_canonical_constant():
    c = canonical(constant_kernel())
    assert c.kind == "finite_feature"
    assert c.feature == FeatureSpec("constant", 1, 1.0)
    assert_allclose(eval_scalar_kernel(c, 2.0, 9.0), 1.0)


def test_serialization_roundtrip():
    for spec in (maturation_kernel(1.3), clearance_only_kernel(), mixed_spec()):
        back = kernel_spec_from_dict(kernel_spec_to_dict(spec))
        assert back == spec


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        gaussian_kernel(0.0)
    with pytest.raises(ValueError):
        KernelSpec((gaussian_kernel(),), frozenset(), frozenset({0}))  # no features
    with pytest.raises(ValueError):
        KernelSpec((zero_kernel(),), frozenset({0}), frozenset())  # zero must be primal
    with pytest.raises(ValueError):
        KernelSpec((gaussian_kernel(), constant_kernel()), frozenset({0}), frozenset({0, 1}))
    with pytest.raises(ValueError):
        FeatureSpec("constant", dim=2)
    with pytest.raises(ValueError):
        assemble_mixed_operators(maturation_kernel(), [1.0, np.nan])


def test_coefficient_shape_checked():
    with pytest.raises(ValueError):
        RkhsCoefficients(np.zeros(4), maturation_kernel(), np.array([1.0, 2.0]))
