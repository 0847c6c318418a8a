"""Parametric covariate-to-parameter families for the two-compartment model.

Each family maps an age in years to the standardized parameter vector
``theta* = (CL*, V1*, Q*, V2*)`` of a 70 kg reference adult.  Only the
clearance entry depends on age; the other three are free constants that are
estimated jointly with the clearance-curve parameters.

Clearance curves
----------------
``saturable_exponential``
    CL*(a) = (1 - alpha * exp(-beta * a)) * cl_max,
    tau = (alpha, beta, cl_max, v1, q, v2).
``affine_linear``
    CL*(a) = intercept + slope * a,
    tau = (intercept, slope, v1, q, v2).
``michaelis_menten``
    CL*(a) = cl_max * a / (km + a),
    tau = (cl_max, km, v1, q, v2).

Units: clearances and intercompartmental flow in L/day, volumes in L,
ages in years, beta in 1/year, km in years.  Liter-scale components keep the
entries of theta* within one or two orders of magnitude of each other, which
the RKHS penalty and the parameter-space test statistics both rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FAMILY_KINDS",
    "ParametricFamily",
    "default_start",
    "family_dim",
    "reference_family",
]

SATURABLE = "saturable_exponential"
AFFINE = "affine_linear"
MICHAELIS = "michaelis_menten"

FAMILY_KINDS = (SATURABLE, AFFINE, MICHAELIS)

_PARAM_NAMES = {
    SATURABLE: ("alpha", "beta", "cl_max", "v1", "q", "v2"),
    AFFINE: ("intercept", "slope", "v1", "q", "v2"),
    MICHAELIS: ("cl_max", "km", "v1", "q", "v2"),
}

# Order-of-magnitude starting points for fits from scratch.
_DEFAULT_START = {
    SATURABLE: (0.5, 0.1, 0.15, 3.0, 0.8, 2.0),
    AFFINE: (0.08, 0.005, 3.0, 0.8, 2.0),
    MICHAELIS: (0.2, 1.0, 3.0, 0.8, 2.0),
}

# Reference saturable-exponential truth used by the simulation study:
# monoclonal-antibody population values, clearance maturing from 41.1% of
# its adult asymptote at birth.
REFERENCE_TAU = (0.589, 0.133, 0.198, 4.09, 0.879, 2.23)


def family_dim(kind: str) -> int:
    """Number of parameters of a family kind."""
    _check_kind(kind)
    return len(_PARAM_NAMES[kind])


def default_start(kind: str) -> np.ndarray:
    """Documented default starting vector for fitting a family from scratch."""
    _check_kind(kind)
    return np.array(_DEFAULT_START[kind])


def _check_kind(kind: str) -> None:
    if kind not in FAMILY_KINDS:
        raise ValueError(f"unknown family kind {kind!r}; expected one of {FAMILY_KINDS}")


@dataclass(frozen=True)
class ParametricFamily:
    """A covariate model: parameter vector ``tau`` plus a clearance-curve kind.

    Construction does not restrict ``tau`` to the family's valid domain, so
    intermediate points of an unconstrained fit are representable; call
    :meth:`validate` before using a family as a simulation truth.
    """

    kind: str
    tau: tuple

    def __post_init__(self):
        _check_kind(self.kind)
        tau = tuple(float(t) for t in np.asarray(self.tau, dtype=float).ravel())
        if len(tau) != family_dim(self.kind):
            raise ValueError(
                f"{self.kind} expects {family_dim(self.kind)} parameters, got {len(tau)}"
            )
        object.__setattr__(self, "tau", tau)

    @property
    def param_names(self) -> tuple:
        return _PARAM_NAMES[self.kind]

    @property
    def n_params(self) -> int:
        return len(self.tau)

    @property
    def constants(self) -> np.ndarray:
        """The age-independent entries (V1*, Q*, V2*)."""
        return np.array(self.tau[-3:])

    def validate(self) -> None:
        """Raise ValueError if ``tau`` lies outside the family's valid domain."""
        names = dict(zip(self.param_names, self.tau))
        bad = [k for k in ("v1", "q", "v2") if names[k] <= 0.0]
        if self.kind == SATURABLE:
            if not 0.0 < names["alpha"] < 1.0:
                bad.append("alpha")
            if names["beta"] <= 0.0:
                bad.append("beta")
            if names["cl_max"] <= 0.0:
                bad.append("cl_max")
        elif self.kind == AFFINE:
            if names["intercept"] <= 0.0:
                bad.append("intercept")
            if names["slope"] < 0.0:
                bad.append("slope")
        elif self.kind == MICHAELIS:
            if names["cl_max"] <= 0.0:
                bad.append("cl_max")
            if names["km"] <= 0.0:
                bad.append("km")
        if bad:
            raise ValueError(f"invalid {self.kind} parameters: {', '.join(sorted(set(bad)))}")

    def clearance(self, ages) -> np.ndarray:
        """Standardized clearance CL*(a) in L/day at ages in years."""
        a = np.asarray(ages, dtype=float)
        if self.kind == SATURABLE:
            alpha, beta, cl_max = self.tau[:3]
            return (1.0 - alpha * np.exp(-beta * a)) * cl_max
        if self.kind == AFFINE:
            intercept, slope = self.tau[:2]
            return intercept + slope * a
        cl_max, km = self.tau[:2]
        return cl_max * a / (km + a)

    def theta_star(self, ages) -> np.ndarray:
        """Standardized parameter vectors, shape ``ages.shape + (4,)``."""
        a = np.asarray(ages, dtype=float)
        out = np.empty(a.shape + (4,))
        out[..., 0] = self.clearance(a)
        out[..., 1:] = self.constants
        return out

    def tau_jacobian(self, ages) -> np.ndarray:
        """d theta*/d tau, shape ``(m, 4, n_params)`` for ``m`` ages."""
        a = np.atleast_1d(np.asarray(ages, dtype=float))
        m, k = a.shape[0], self.n_params
        jac = np.zeros((m, 4, k))
        if self.kind == SATURABLE:
            alpha, beta, cl_max = self.tau[:3]
            e = np.exp(-beta * a)
            jac[:, 0, 0] = -e * cl_max
            jac[:, 0, 1] = alpha * a * e * cl_max
            jac[:, 0, 2] = 1.0 - alpha * e
        elif self.kind == AFFINE:
            jac[:, 0, 0] = 1.0
            jac[:, 0, 1] = a
        else:
            cl_max, km = self.tau[:2]
            jac[:, 0, 0] = a / (km + a)
            jac[:, 0, 1] = -cl_max * a / (km + a) ** 2
        # V1*, Q*, V2* are the trailing parameters for every kind.
        jac[:, 1, k - 3] = 1.0
        jac[:, 2, k - 2] = 1.0
        jac[:, 3, k - 1] = 1.0
        return jac

    def with_tau(self, tau) -> "ParametricFamily":
        return ParametricFamily(self.kind, tuple(np.asarray(tau, dtype=float)))


def reference_family() -> ParametricFamily:
    """The saturable-exponential truth used by the simulation study."""
    return ParametricFamily(SATURABLE, REFERENCE_TAU)
