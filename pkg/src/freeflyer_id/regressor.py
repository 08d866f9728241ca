"""Regressor that makes the Newton-Euler wrench linear in the inertial parameters.

With ``pi = [m, m p_off, Jxx, Jxy, Jxz, Jyy, Jyz, Jzz]`` (inertia about the
body origin) the applied body wrench is ``gamma(R, w, alpha, a_c) @ pi``::

    gamma = [[ R^T a_c, S(alpha) + S(w) S(w), 0                      ],
             [ 0,       -S(R^T a_c),          [*alpha] + S(w) [*w]   ]]

where ``[*w] J6 = J_c w``.  All functions accept a leading sample axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dynamics import Wrench
from .errors import GimbalProximityError, InvalidInputError
from .rotations import euler_to_matrix, skew

log = logging.getLogger(__name__)

GIMBAL_COS_MIN = 1e-3


def star_omega(omega: np.ndarray) -> np.ndarray:
    """3x6 matrix with ``star_omega(w) @ (Jxx, Jxy, Jxz, Jyy, Jyz, Jzz) = J w``."""
    w = np.asarray(omega, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 6))
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    out[..., 0, 0], out[..., 0, 1], out[..., 0, 2] = wx, wy, wz
    out[..., 1, 1], out[..., 1, 3], out[..., 1, 4] = wx, wy, wz
    out[..., 2, 2], out[..., 2, 4], out[..., 2, 5] = wx, wy, wz
    return out


def regressor_row(R, omega, alpha, a_c) -> np.ndarray:
    """The 6x10 regressor (or an ``(N, 6, 10)`` stack for stacked inputs).

    Parameters
    ----------
    R : (..., 3, 3) body-to-inertial rotation
    omega, alpha : (..., 3) body angular velocity and acceleration
    a_c : (..., 3) inertial acceleration of the body origin
    """
    R = np.asarray(R, dtype=float)
    omega = np.asarray(omega, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    a_c = np.asarray(a_c, dtype=float)
    a_b = np.einsum("...ji,...j->...i", R, a_c)
    Sw = skew(omega)
    gamma = np.zeros(omega.shape[:-1] + (6, 10))
    gamma[..., 0:3, 0] = a_b
    gamma[..., 0:3, 1:4] = skew(alpha) + Sw @ Sw
    gamma[..., 3:6, 1:4] = -skew(a_b)
    gamma[..., 3:6, 4:10] = star_omega(alpha) + Sw @ star_omega(omega)
    return gamma


def euler_kinematics(phi, theta, psi, rates, accels):
    """Z-Y-X Euler angles and their derivatives to ``(R, omega, alpha)``.

    ``rates`` and ``accels`` are ``(..., 3)`` arrays ordered (phi, theta, psi).
    Body rates follow ``omega = T(phi, theta) @ rates`` and
    ``alpha = T_dot @ rates + T @ accels``.

    Raises
    ------
    GimbalProximityError
        If ``|cos(theta)| < 1e-3`` anywhere.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    rates = np.asarray(rates, dtype=float)
    accels = np.asarray(accels, dtype=float)
    ct = np.cos(theta)
    if np.any(np.abs(ct) < GIMBAL_COS_MIN):
        raise GimbalProximityError("pitch too close to +/- 90 deg for Z-Y-X Euler angles")
    cf, sf, st = np.cos(phi), np.sin(phi), np.sin(theta)
    dphi, dth = rates[..., 0], rates[..., 1]

    T = np.zeros(phi.shape + (3, 3))
    T[..., 0, 0] = 1.0
    T[..., 0, 2] = -st
    T[..., 1, 1] = cf
    T[..., 1, 2] = sf * ct
    T[..., 2, 1] = -sf
    T[..., 2, 2] = cf * ct

    Td = np.zeros_like(T)
    Td[..., 0, 2] = -ct * dth
    Td[..., 1, 1] = -sf * dphi
    Td[..., 1, 2] = cf * ct * dphi - sf * st * dth
    Td[..., 2, 1] = -cf * dphi
    Td[..., 2, 2] = -sf * ct * dphi - cf * st * dth

    R = euler_to_matrix(phi, theta, psi)
    omega = np.einsum("...ij,...j->...i", T, rates)
    alpha = np.einsum("...ij,...j->...i", Td, rates) + np.einsum("...ij,...j->...i", T, accels)
    return R, omega, alpha


def kinematics_from_pose(X, Xd, Xdd):
    """Pose series ``(N, 6)`` (x, y, z, phi, theta, psi) and derivatives to regressor inputs.

    Returns ``(R, omega, alpha, a_c, v_c)``.
    """
    X, Xd, Xdd = (np.asarray(a, dtype=float) for a in (X, Xd, Xdd))
    R, omega, alpha = euler_kinematics(X[..., 3], X[..., 4], X[..., 5], Xd[..., 3:6], Xdd[..., 3:6])
    return R, omega, alpha, Xdd[..., 0:3], Xd[..., 0:3]


@dataclass
class StackedSystem:
    """Row-stacked regressor ``W`` (6N x 10) and wrench vector ``b`` (6N)."""

    W: np.ndarray
    b: np.ndarray

    @property
    def N(self) -> int:
        return self.W.shape[0] // 6

    @property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.W, compute_uv=False)

    @property
    def rank(self) -> int:
        s = self.singular_values
        if s.size == 0 or s[0] == 0:
            return 0
        return int(np.sum(s > s[0] * max(self.W.shape) * np.finfo(float).eps))

    @property
    def cond(self) -> float:
        s = self.singular_values
        return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def stack(gammas: np.ndarray, wrenches: np.ndarray) -> StackedSystem:
    """Stack ``(N, 6, 10)`` regressors and ``(N, 6)`` wrenches in sample order."""
    gammas = np.asarray(gammas, dtype=float)
    wrenches = np.asarray(wrenches, dtype=float)
    if gammas.ndim != 3 or gammas.shape[1:] != (6, 10) or wrenches.shape != (gammas.shape[0], 6):
        raise InvalidInputError("expected (N, 6, 10) regressors and (N, 6) wrenches")
    return StackedSystem(gammas.reshape(-1, 10), wrenches.reshape(-1))


def assemble(samples: Iterable[tuple[np.ndarray, Wrench]]) -> StackedSystem:
    """Stack ``(gamma, wrench)`` pairs; rank deficiency is logged, not raised."""
    samples = list(samples)
    if len(samples) < 1:
        raise InvalidInputError("need at least one sample")
    gammas = np.stack([np.asarray(g, dtype=float) for g, _ in samples])
    wrenches = np.stack([w.vector if isinstance(w, Wrench) else np.asarray(w, float) for _, w in samples])
    system = stack(gammas, wrenches)
    if system.rank < 10:
        log.warning("stacked regressor has rank %d < 10", system.rank)
    return system
