"""Shared helpers for the test suite."""

import numpy as np

from covgof import ParametricFamily, ScenarioSpec, reference_family, simulate_dataset


def small_dataset(n=8, seed=0, sigma=0.1, times=(1.0, 4.0, 10.0), family=None, n_doses=1):
    """A quick simulated dataset; defaults keep every fit under a second."""
    spec = ScenarioSpec("small", n, sigma, tuple(times), n_doses)
    fam = family or reference_family()
    return simulate_dataset(spec, fam, seed=seed)


def affine_truth() -> ParametricFamily:
    """A valid affine-linear generating family of realistic magnitude."""
    return ParametricFamily("affine_linear", (0.09, 0.005, 4.09, 0.879, 2.23))


def ode_concentration(theta_scaled, dose_mg, times, dose_times=(0.0,)):
    """Reference central concentration by numeric integration.

    Integrates the two-compartment mass balance
        A1' = -(CL/V1) A1 - (Q/V1) A1 + (Q/V2) A2
        A2' =  (Q/V1) A1 - (Q/V2) A2
    piecewise between bolus events (each dose adds ``dose_mg`` to the central
    amount A1) and returns C1 = A1/V1 at the requested times. A time that
    coincides with a dose instant is evaluated after the bolus.
    """
    from scipy.integrate import solve_ivp

    CL, V1, Q, V2 = (float(v) for v in theta_scaled)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    dose_times = np.sort(np.atleast_1d(np.asarray(dose_times, dtype=float)))

    def rhs(_t, A):
        a1, a2 = A
        return [-(CL + Q) / V1 * a1 + Q / V2 * a2, Q / V1 * a1 - Q / V2 * a2]

    order = np.argsort(times)
    conc = np.empty_like(times)
    state = np.zeros(2)
    t_now = dose_times[0]
    boundaries = list(dose_times) + [max(times.max(), dose_times[-1]) + 1.0]
    k = 0
    for seg in range(len(dose_times)):
        state[0] += dose_mg
        t_end = boundaries[seg + 1]
        # Times in [t_now, t_end) belong to this segment; a time equal to
        # t_now gets the fresh post-dose state.
        seg_idx = []
        while k < order.size and times[order[k]] < t_end:
            seg_idx.append(order[k])
            k += 1
        eval_ts = [times[i] for i in seg_idx]
        for i, te in zip(seg_idx, eval_ts):
            if te == t_now:
                conc[i] = state[0] / V1
        inner = [(i, te) for i, te in zip(seg_idx, eval_ts) if te > t_now]
        if inner:
            sol = solve_ivp(
                rhs, (t_now, inner[-1][1]), state,
                t_eval=[te for _, te in inner],
                rtol=1e-11, atol=1e-14, method="DOP853",
            )
            for (i, _), a1 in zip(inner, sol.y[0]):
                conc[i] = a1 / V1
        if seg + 1 < len(dose_times):
            sol = solve_ivp(rhs, (t_now, t_end), state, rtol=1e-12, atol=1e-15,
                            method="DOP853")
            state = sol.y[:, -1].copy()
            t_now = t_end
    for i, te in enumerate(times):
        if te < dose_times[0]:
            conc[i] = 0.0
    return conc
