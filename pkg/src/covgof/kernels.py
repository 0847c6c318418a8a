"""Diagonal matrix-valued kernels and their mixed primal/dual representation.

A vector-valued function ``h = (h_1, ..., h_p)`` with independent components
is modeled by a diagonal matrix kernel ``K(x, x') = diag(k_1, ..., k_p)``.
Each scalar component ``k_l`` is either

* represented through its kernel sections at the ``n`` training covariates
  ("dual", coefficient block of size ``n``), or
* represented through an explicit finite feature map ("primal", coefficient
  block of size ``d_l``, possibly zero for a frozen component).

Stacking the blocks gives one coefficient vector ``gamma`` of length
``d = n * |dual| + sum_l d_l``.  The linear-algebra objects used throughout:

* ``D``: block diagonal, per-component Gram matrix (dual) or identity
  (primal).  The squared RKHS norm is ``gamma' D gamma``.
* ``P``: block diagonal, identity (dual) or feature matrix (primal); maps
  coefficients of the kernel sections to coefficients of point evaluations.
* ``M = P D``: maps ``gamma`` to the function values at the training
  covariates, stacked per component: ``theta = M gamma``.

Covariates enter every kernel through age in years.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEFAULT_BANDWIDTH_YEARS",
    "WEEKS_PER_YEAR",
    "FeatureSpec",
    "KernelSpec",
    "MixedOperators",
    "RkhsCoefficients",
    "assemble_kernel_matrix",
    "assemble_mixed_operators",
    "canonical",
    "clearance_only_kernel",
    "constant_kernel",
    "eval_dual_function",
    "eval_rkhs_function",
    "eval_scalar_kernel",
    "gaussian_kernel",
    "kernel_spec",
    "kernel_spec_from_dict",
    "kernel_spec_to_dict",
    "maturation_kernel",
    "polynomial_kernel",
    "rkhs_norm_sq",
    "scalar_kernel_matrix",
    "to_dual_coefficients",
    "train_values",
    "zero_kernel",
]

WEEKS_PER_YEAR = 365.25 / 7.0

# Default Gaussian bandwidth: 100 weeks expressed in years, about 10% of the
# simulated 0-20 year age range.
DEFAULT_BANDWIDTH_YEARS = 100.0 / WEEKS_PER_YEAR

GAUSSIAN = "gaussian"
CONSTANT = "constant"
FINITE_FEATURE = "finite_feature"
ZERO = "zero"

_KINDS = (GAUSSIAN, CONSTANT, FINITE_FEATURE, ZERO)


@dataclass(frozen=True)
class FeatureSpec:
    """Finite feature map on ages.

    ``constant`` is the single feature ``phi(a) = value``; ``polynomial`` is
    ``phi(a) = (1, a, ..., a**(dim-1))``.
    """

    kind: str
    dim: int = 1
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("feature dim must be >= 1")
        if self.kind == "constant" and self.dim != 1:
            raise ValueError("constant feature has dim 1")

    def evaluate(self, ages) -> np.ndarray:
        a = np.atleast_1d(np.asarray(ages, dtype=float))
        if self.kind == "constant":
            return np.full((a.shape[0], 1), self.value)
        return np.vander(a, self.dim, increasing=True)


@dataclass(frozen=True)
class ScalarKernel:
    kind: str
    bandwidth: float | None = None
    feature: FeatureSpec | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == GAUSSIAN:
            if self.bandwidth is None or not self.bandwidth > 0.0:
                raise ValueError("gaussian kernel needs a positive bandwidth")
        if self.kind == FINITE_FEATURE and self.feature is None:
            raise ValueError("finite_feature kernel needs a FeatureSpec")

    @property
    def feature_dim(self) -> int | None:
        """Primal block size; None for the infinite-dimensional Gaussian."""
        if self.kind == GAUSSIAN:
            return None
        if self.kind == ZERO:
            return 0
        if self.kind == CONSTANT:
            return 1
        return self.feature.dim


def gaussian_kernel(bandwidth: float = DEFAULT_BANDWIDTH_YEARS) -> ScalarKernel:
    """Gaussian kernel exp(-(a - a')**2 / (2 * bandwidth**2)), ages in years."""
    return ScalarKernel(GAUSSIAN, bandwidth=bandwidth)


def constant_kernel() -> ScalarKernel:
    """k(a, a') = 1; the component is a free constant."""
    return ScalarKernel(CONSTANT)


def zero_kernel() -> ScalarKernel:
    """k(a, a') = 0; the component is frozen at zero."""
    return ScalarKernel(ZERO)


def polynomial_kernel(dim: int) -> ScalarKernel:
    """Finite feature kernel with monomial features 1, a, ..., a**(dim-1)."""
    return ScalarKernel(FINITE_FEATURE, feature=FeatureSpec("polynomial", dim))


def canonical(kern: ScalarKernel) -> ScalarKernel:
    """Rewrite ``constant`` as the equivalent one-dimensional feature kernel."""
    if kern.kind == CONSTANT:
        return ScalarKernel(FINITE_FEATURE, feature=FeatureSpec("constant", 1, 1.0))
    return kern


def eval_scalar_kernel(kern: ScalarKernel, a, a2) -> np.ndarray:
    """Evaluate k(a, a2) with numpy broadcasting."""
    a = np.asarray(a, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    if kern.kind == GAUSSIAN:
        diff = a - a2
        return np.exp(-(diff * diff) / (2.0 * kern.bandwidth**2))
    if kern.kind == CONSTANT:
        return np.broadcast_to(1.0, np.broadcast(a, a2).shape).copy()
    if kern.kind == ZERO:
        return np.broadcast_to(0.0, np.broadcast(a, a2).shape).copy()
    shape = np.broadcast(a, a2).shape
    pa = kern.feature.evaluate(np.broadcast_to(a, shape).ravel())
    pb = kern.feature.evaluate(np.broadcast_to(a2, shape).ravel())
    return np.einsum("ij,ij->i", pa, pb).reshape(shape)


def scalar_kernel_matrix(kern: ScalarKernel, ages, ages2=None) -> np.ndarray:
    """Gram matrix k(ages[i], ages2[j]), shape (m, m2)."""
    a = np.atleast_1d(np.asarray(ages, dtype=float))
    a2 = a if ages2 is None else np.atleast_1d(np.asarray(ages2, dtype=float))
    if kern.kind == GAUSSIAN:
        diff = a[:, None] - a2[None, :]
        return np.exp(-(diff * diff) / (2.0 * kern.bandwidth**2))
    if kern.kind == CONSTANT:
        return np.ones((a.shape[0], a2.shape[0]))
    if kern.kind == ZERO:
        return np.zeros((a.shape[0], a2.shape[0]))
    return kern.feature.evaluate(a) @ kern.feature.evaluate(a2).T


@dataclass(frozen=True)
class KernelSpec:
    """Diagonal matrix kernel plus a primal/dual partition of its components."""

    components: tuple
    dual: frozenset
    primal: frozenset

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps or not all(isinstance(c, ScalarKernel) for c in comps):
            raise ValueError("components must be a non-empty tuple of ScalarKernel")
        object.__setattr__(self, "components", comps)
        p = len(comps)
        dual = frozenset(int(i) for i in self.dual)
        primal = frozenset(int(i) for i in self.primal)
        object.__setattr__(self, "dual", dual)
        object.__setattr__(self, "primal", primal)
        if dual & primal or dual | primal != set(range(p)):
            raise ValueError("dual and primal must partition the component indices")
        for l in primal:
            if comps[l].feature_dim is None:
                raise ValueError(f"component {l} has no finite feature map; keep it dual")
        for l in dual:
            if comps[l].kind == ZERO:
                raise ValueError(f"zero component {l} must be primal")

    @property
    def p(self) -> int:
        return len(self.components)

    def block_dims(self, n: int) -> list:
        """Coefficient block sizes per component for n training covariates."""
        return [n if l in self.dual else self.components[l].feature_dim
                for l in range(self.p)]

    def mixed_dim(self, n: int) -> int:
        """Total coefficient dimension d."""
        return int(sum(self.block_dims(n)))


def kernel_spec(components, dual=None) -> KernelSpec:
    """Build a KernelSpec; by default only Gaussian components stay dual."""
    comps = tuple(components)
    if dual is None:
        dual = {l for l, c in enumerate(comps) if c.kind == GAUSSIAN}
    dual = frozenset(dual)
    primal = frozenset(range(len(comps))) - dual
    return KernelSpec(comps, dual, primal)


def maturation_kernel(bandwidth: float = DEFAULT_BANDWIDTH_YEARS) -> KernelSpec:
    """Kernel for a fully nonparametric model of theta*(a).

    Gaussian component for the maturing clearance plus free constants for
    V1*, Q*, V2*; coefficient dimension n + 3.
    """
    return kernel_spec(
        (gaussian_kernel(bandwidth), constant_kernel(), constant_kernel(), constant_kernel())
    )


def clearance_only_kernel(bandwidth: float = DEFAULT_BANDWIDTH_YEARS) -> KernelSpec:
    """Kernel for a clearance-only deviation on top of a parametric fit.

    Gaussian first component, remaining components frozen at zero;
    coefficient dimension n.
    """
    return kernel_spec(
        (gaussian_kernel(bandwidth), zero_kernel(), zero_kernel(), zero_kernel())
    )


def _check_ages(ages) -> np.ndarray:
    a = np.atleast_1d(np.asarray(ages, dtype=float))
    if a.ndim != 1:
        raise ValueError("covariate ages must be one-dimensional")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite covariate age")
    return a


def assemble_kernel_matrix(spec: KernelSpec, ages) -> np.ndarray:
    """Block-diagonal (n*p, n*p) kernel matrix in per-component stacking."""
    a = _check_ages(ages)
    n, p = a.shape[0], spec.p
    out = np.zeros((n * p, n * p))
    for l, comp in enumerate(spec.components):
        out[l * n:(l + 1) * n, l * n:(l + 1) * n] = scalar_kernel_matrix(comp, a)
    return out


@dataclass(frozen=True)
class MixedOperators:
    """Operators of the mixed representation for one training covariate set.

    ``M3`` is ``M`` reshaped to (p, n, d) so that ``M3[l, i]`` is the row
    mapping ``gamma`` to component ``l`` at covariate ``i``; ``P3`` likewise.
    """

    spec: KernelSpec
    ages: np.ndarray
    D: np.ndarray
    P: np.ndarray
    M: np.ndarray
    slices: tuple

    @property
    def n(self) -> int:
        return self.ages.shape[0]

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @property
    def M3(self) -> np.ndarray:
        return self.M.reshape(self.p, self.n, self.d)

    @property
    def P3(self) -> np.ndarray:
        return self.P.reshape(self.p, self.n, self.d)


def assemble_mixed_operators(spec: KernelSpec, ages) -> MixedOperators:
    """Build D, P and M = P D for the given training ages."""
    a = _check_ages(ages)
    n, p = a.shape[0], spec.p
    dims = spec.block_dims(n)
    d = int(sum(dims))
    offsets = np.concatenate(([0], np.cumsum(dims))).astype(int)
    slices = tuple(slice(offsets[l], offsets[l + 1]) for l in range(p))
    D = np.zeros((d, d))
    P = np.zeros((n * p, d))
    M = np.zeros((n * p, d))
    for l, comp in enumerate(spec.components):
        sl, rows = slices[l], slice(l * n, (l + 1) * n)
        if l in spec.dual:
            K = scalar_kernel_matrix(comp, a)
            D[sl, sl] = K
            P[rows, sl] = np.eye(n)
            M[rows, sl] = K
        elif dims[l] > 0:
            phi = canonical(comp).feature.evaluate(a)
            D[sl, sl] = np.eye(dims[l])
            P[rows, sl] = phi
            M[rows, sl] = phi
    return MixedOperators(spec, a, D, P, M, slices)


@dataclass(frozen=True)
class RkhsCoefficients:
    """A fitted RKHS function: coefficients plus what is needed to evaluate it."""

    gamma: np.ndarray
    spec: KernelSpec
    train_ages: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "train_ages", np.asarray(self.train_ages, dtype=float))
        d = self.spec.mixed_dim(self.train_ages.shape[0])
        if self.gamma.shape != (d,):
            raise ValueError(f"gamma must have shape ({d},), got {self.gamma.shape}")


def eval_rkhs_function(coeffs: RkhsCoefficients, ages) -> np.ndarray:
    """Evaluate the fitted function at ages; shape (m, p), or (p,) for a scalar."""
    scalar = np.ndim(ages) == 0
    a = np.atleast_1d(np.asarray(ages, dtype=float))
    spec, train = coeffs.spec, coeffs.train_ages
    n = train.shape[0]
    dims = spec.block_dims(n)
    offsets = np.concatenate(([0], np.cumsum(dims))).astype(int)
    out = np.zeros((a.shape[0], spec.p))
    for l, comp in enumerate(spec.components):
        g = coeffs.gamma[offsets[l]:offsets[l + 1]]
        if l in spec.dual:
            out[:, l] = scalar_kernel_matrix(comp, a, train) @ g
        elif dims[l] > 0:
            out[:, l] = canonical(comp).feature.evaluate(a) @ g
    return out[0] if scalar else out


def train_values(coeffs: RkhsCoefficients, ops: MixedOperators) -> np.ndarray:
    """Function values at the training covariates via theta = M gamma; (n, p)."""
    return (ops.M3 @ coeffs.gamma).T


def rkhs_norm_sq(coeffs: RkhsCoefficients, ops: MixedOperators | None = None) -> float:
    """Squared RKHS norm gamma' D gamma."""
    if ops is not None:
        return float(coeffs.gamma @ ops.D @ coeffs.gamma)
    spec, train = coeffs.spec, coeffs.train_ages
    dims = spec.block_dims(train.shape[0])
    offsets = np.concatenate(([0], np.cumsum(dims))).astype(int)
    total = 0.0
    for l, comp in enumerate(spec.components):
        g = coeffs.gamma[offsets[l]:offsets[l + 1]]
        if l in spec.dual:
            total += float(g @ scalar_kernel_matrix(comp, train) @ g)
        else:
            total += float(g @ g)
    return total


def to_dual_coefficients(coeffs: RkhsCoefficients, ops: MixedOperators) -> np.ndarray:
    """Convert to an equivalent fully dual coefficient array of shape (n, p).

    Primal blocks are mapped to the least-norm dual coefficients representing
    the same function, which requires the feature matrix to have full column
    rank at the training covariates.  Zero components get zero coefficients.
    """
    n, p = ops.n, ops.p
    alpha = np.zeros((n, p))
    for l, comp in enumerate(ops.spec.components):
        g = coeffs.gamma[ops.slices[l]]
        if l in ops.spec.dual:
            alpha[:, l] = g
        elif g.size > 0:
            phi = canonical(comp).feature.evaluate(ops.ages)
            sol, _, rank, _ = np.linalg.lstsq(phi.T, g, rcond=None)
            if rank < g.size:
                raise ValueError(
                    f"feature matrix of component {l} is rank deficient; "
                    "no exact dual representation"
                )
            alpha[:, l] = sol
    return alpha


def eval_dual_function(spec: KernelSpec, train_ages, alpha, ages) -> np.ndarray:
    """Evaluate sum_i K(a, train_i) alpha_i for dual coefficients (n, p)."""
    a = np.atleast_1d(np.asarray(ages, dtype=float))
    train = np.asarray(train_ages, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    out = np.zeros((a.shape[0], spec.p))
    for l, comp in enumerate(spec.components):
        out[:, l] = scalar_kernel_matrix(comp, a, train) @ alpha[:, l]
    return out


def _feature_to_dict(f: FeatureSpec | None):
    if f is None:
        return None
    return {"kind": f.kind, "dim": f.dim, "value": f.value}


def kernel_spec_to_dict(spec: KernelSpec) -> dict:
    """JSON-ready description; inverse of :func:`kernel_spec_from_dict`."""
    comps = []
    for c in spec.components:
        entry = {"kind": c.kind}
        if c.bandwidth is not None:
            entry["bandwidth"] = c.bandwidth
        if c.feature is not None:
            entry["feature"] = _feature_to_dict(c.feature)
        comps.append(entry)
    return {
        "components": comps,
        "dual": sorted(spec.dual),
        "primal": sorted(spec.primal),
    }


def kernel_spec_from_dict(data: dict) -> KernelSpec:
    comps = []
    for entry in data["components"]:
        feat = entry.get("feature")
        comps.append(
            ScalarKernel(
                entry["kind"],
                bandwidth=entry.get("bandwidth"),
                feature=FeatureSpec(**feat) if feat else None,
            )
        )
    return KernelSpec(tuple(comps), frozenset(data["dual"]), frozenset(data["primal"]))
