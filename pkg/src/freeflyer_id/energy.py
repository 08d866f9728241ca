"""Energy balance between actuation power and kinetic-energy rate.

For the true parameters the power delivered by the body wrench,
``P = F . (R^T v_c) + M . omega``, equals the rate of change of kinetic energy
``T_dot = m (R^T a_s) . (R^T v_s) + omega . (J_s alpha + omega x J_s omega)``.
With estimated parameters and filtered kinematics the mean gap ``|P - T_dot|``
serves to pick the number of harmonics kept from the measured data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import InertialParams, RigidBodyState, Wrench
from .errors import SelectionFailureError

log = logging.getLogger(__name__)


def kinetic_energy(params: InertialParams, state: RigidBodyState) -> float:
    """Translational energy of the system COM plus rotational energy about it."""
    p = params.p_off
    v_s = state.v + state.R @ np.cross(state.omega, p)
    return 0.5 * params.mass * v_s @ v_s + 0.5 * state.omega @ params.J_s @ state.omega


def input_power(wrench: Wrench, state: RigidBodyState, params_est: InertialParams | None = None) -> float:
    """Power of the body wrench; independent of the inertial parameters."""
    return float(wrench.F @ (state.R.T @ state.v) + wrench.M @ state.omega)


def input_power_expanded(wrench: Wrench, state: RigidBodyState, p_off) -> float:
    """Power written with the COM-offset terms before their cancellation."""
    p = np.asarray(p_off, dtype=float)
    F, M, om = wrench.F, wrench.M, state.omega
    return float(F @ (state.R.T @ state.v) + M @ om - om @ np.cross(p, F) + F @ np.cross(om, p))


def energy_rate(params: InertialParams, state: RigidBodyState, a_c, alpha) -> float:
    """Kinetic-energy rate from body-origin kinematics and a parameter set."""
    return float(energy_rate_series(params, state.R[None], state.v[None], state.omega[None],
                                    np.asarray(a_c, float)[None], np.asarray(alpha, float)[None])[0])


def energy_rate_series(params: InertialParams, R, v_c, omega, a_c, alpha) -> np.ndarray:
    p = params.p_off
    J_s = params.J_s
    wxp = np.cross(omega, p)
    v_b = np.einsum("nji,nj->ni", R, v_c) + wxp
    a_b = np.einsum("nji,nj->ni", R, a_c) + np.cross(alpha, p) + np.cross(omega, wxp)
    Jw = omega @ J_s.T
    rot = np.einsum("ni,ni->n", omega, alpha @ J_s.T + np.cross(omega, Jw))
    return params.mass * np.einsum("ni,ni->n", a_b, v_b) + rot


def power_series(wrenches, R, v_c, omega) -> np.ndarray:
    wrenches = np.asarray(wrenches, dtype=float)
    v_b = np.einsum("nji,nj->ni", R, v_c)
    return np.einsum("ni,ni->n", wrenches[:, :3], v_b) + np.einsum("ni,ni->n", wrenches[:, 3:], omega)


@dataclass
class EnergyTrace:
    t: np.ndarray
    P: np.ndarray
    Tdot: np.ndarray
    residual: float
    flagged: bool = False


def energy_trace(params: InertialParams, kin, wrenches) -> EnergyTrace:
    """``P`` and ``T_dot`` over one period; unphysical parameters give an infinite residual."""
    P = power_series(wrenches, kin.R, kin.v_c, kin.omega)
    if not params.is_physical:
        return EnergyTrace(kin.t, P, np.full_like(P, np.nan), float("inf"), True)
    Tdot = energy_rate_series(params, kin.R, kin.v_c, kin.omega, kin.a_c, kin.alpha)
    return EnergyTrace(kin.t, P, Tdot, float(np.mean(np.abs(P - Tdot))))


@dataclass
class HarmonicSelection:
    n_star: int
    n_values: list
    residuals: dict
    traces: dict = field(repr=False)
    estimates: dict = field(repr=False)
    systems: dict = field(repr=False)


def pick_min(residuals: dict, rtol: float = 1e-6, atol: float = 1e-9) -> int:
    """Smallest ``n`` whose residual is within tolerance of the minimum."""
    finite = {n: r for n, r in residuals.items() if np.isfinite(r)}
    if not finite:
        raise SelectionFailureError("no finite residual")
    best = min(finite.values())
    return min(n for n, r in finite.items() if r <= best * (1 + rtol) + atol)


def select_harmonics(log_or_data, n_range=(3, 20), actuation=None, rtol: float = 1e-6,
                     atol: float = 1e-9) -> HarmonicSelection:
    """Sweep the harmonic count and keep the one with the least mean ``|P - T_dot|``.

    Each candidate ``n`` filters and fits the cycle-averaged pose with ``n``
    harmonics, estimates the parameters from it and scores the energy gap
    with that estimate.  Residuals within ``rtol``/``atol`` of the minimum
    count as ties and the smallest ``n`` wins.

    ``log_or_data`` is a :class:`~freeflyer_id.control.MeasurementLog` or the
    ``(pose_signal, wrenches)`` pair returned by
    :func:`freeflyer_id.estimation.averaged_data`.
    """
    from .estimation import averaged_data, estimate_for_harmonics

    if isinstance(log_or_data, tuple):
        pose_sig, wrenches = log_or_data
    else:
        pose_sig, wrenches = averaged_data(log_or_data, actuation)
    n_lo, n_hi = n_range
    if n_lo < 1 or n_hi >= pose_sig.N_s / 2 or n_lo > n_hi:
        raise ValueError(f"invalid harmonic range {n_range} for N_s={pose_sig.N_s}")
    residuals, traces, estimates, systems = {}, {}, {}, {}
    for n in range(n_lo, n_hi + 1):
        pi_hat, kin, system = estimate_for_harmonics(pose_sig, wrenches, n)
        params = InertialParams.from_vector(pi_hat)
        trace = energy_trace(params, kin, wrenches)
        residuals[n] = trace.residual
        traces[n] = trace
        estimates[n] = pi_hat
        systems[n] = system
        log.debug("n=%d residual=%.6g flagged=%s", n, trace.residual, trace.flagged)
    try:
        n_star = pick_min(residuals, rtol, atol)
    except SelectionFailureError:
        raise SelectionFailureError(
            "every harmonic candidate produced an unphysical estimate",
            {"residuals": residuals, "estimates": {n: e.tolist() for n, e in estimates.items()}},
        ) from None
    return HarmonicSelection(n_star, list(range(n_lo, n_hi + 1)), residuals, traces, estimates, systems)
