"""Rigid-body model of the post-grasp free-flyer.

The body frame sits at the robot's original centre of mass ``P_c``.  After
grasping, the system centre of mass moves to ``P_s = P_c + R p_off``.  Forces
``F`` and moments ``M`` (about ``P_c``) are expressed in the body frame and
come from the motor inputs through the mixing matrix, ``[F; M] = A u``.

Translational acceleration of ``P_c`` (inertial frame) and angular
acceleration (body frame) follow::

    m (a_c + R (alpha x p_off + w x (w x p_off))) = R F
    J_s alpha + w x J_s w + p_off x F = M

No gravity: the robot operates inside a station in microgravity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InconsistentParametersError, InvalidInputError, SingularInertiaError
from .rotations import euler_to_quat, quat_multiply, quat_normalize, quat_to_matrix, skew

# Space CoBot mass properties before grasping.
COBOT_MASS = 6.047
COBOT_INERTIA = np.array([0.0453, 0.0417, 0.0519])

_SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def sym_from_vec(j6: np.ndarray) -> np.ndarray:
    """``(Jxx, Jxy, Jxz, Jyy, Jyz, Jzz)`` to a symmetric 3x3 matrix."""
    j = np.asarray(j6, dtype=float)
    return np.array([[j[0], j[1], j[2]], [j[1], j[3], j[4]], [j[2], j[4], j[5]]])


def vec_from_sym(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    return np.array([J[i, k] for i, k in _SYM_INDEX])


def parallel_axis(J_s: np.ndarray, mass: float, p_off: np.ndarray) -> np.ndarray:
    """Inertia about the body origin from inertia about the system COM."""
    p = np.asarray(p_off, dtype=float)
    return np.asarray(J_s, dtype=float) + mass * (p @ p * np.eye(3) - np.outer(p, p))


def parallel_axis_inv(J_c: np.ndarray, mass: float, p_off: np.ndarray, check: bool = True) -> np.ndarray:
    """Inertia about the system COM from inertia about the body origin.

    Raises
    ------
    InconsistentParametersError
        If ``check`` is set and the result is not positive definite.
    """
    p = np.asarray(p_off, dtype=float)
    J_s = np.asarray(J_c, dtype=float) - mass * (p @ p * np.eye(3) - np.outer(p, p))
    if check and not is_positive_definite(J_s):
        raise InconsistentParametersError(f"J_s is not positive definite: eig={np.linalg.eigvalsh(J_s)}")
    return J_s


def is_positive_definite(M: np.ndarray) -> bool:
    if not np.all(np.isfinite(M)):
        return False
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class InertialParams:
    """The ten inertial parameters of the robot-plus-object body.

    ``first_moment`` is ``m * p_off`` and ``inertia_c`` holds the six unique
    components of the inertia tensor about the body-frame origin ``P_c``.
    Instances are not validated on construction because least-squares
    estimates can be unphysical; call :meth:`validate` when it matters.
    """

    mass: float
    first_moment: np.ndarray
    inertia_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "first_moment", np.asarray(self.first_moment, dtype=float).reshape(3))
        object.__setattr__(self, "inertia_c", np.asarray(self.inertia_c, dtype=float).reshape(6))

    @classmethod
    def from_vector(cls, pi: np.ndarray) -> "InertialParams":
        pi = np.asarray(pi, dtype=float).reshape(10)
        return cls(pi[0], pi[1:4], pi[4:10])

    @classmethod
    def from_com(cls, mass: float, p_off, J_s) -> "InertialParams":
        """Build from mass, COM offset and inertia about the system COM."""
        p_off = np.asarray(p_off, dtype=float)
        J_s = np.asarray(J_s, dtype=float)
        if J_s.shape == (3,):
            J_s = np.diag(J_s)
        return cls(mass, mass * p_off, vec_from_sym(parallel_axis(J_s, mass, p_off)))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([[self.mass], self.first_moment, self.inertia_c])

    @property
    def p_off(self) -> np.ndarray:
        return self.first_moment / self.mass

    @property
    def J_c(self) -> np.ndarray:
        return sym_from_vec(self.inertia_c)

    @property
    def J_s(self) -> np.ndarray:
        return parallel_axis_inv(self.J_c, self.mass, self.p_off, check=False)

    @property
    def is_physical(self) -> bool:
        if not (np.isfinite(self.mass) and self.mass > 0):
            return False
        return is_positive_definite(self.J_c) and is_positive_definite(self.J_s)

    def validate(self) -> "InertialParams":
        if not np.all(np.isfinite(self.vector)):
            raise InvalidInputError("inertial parameters must be finite")
        if self.mass <= 0:
            raise InconsistentParametersError(f"mass must be positive, got {self.mass}")
        if not is_positive_definite(self.J_c):
            raise InconsistentParametersError("J_c is not positive definite")
        parallel_axis_inv(self.J_c, self.mass, self.p_off)
        return self

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "first_moment": self.first_moment.tolist(),
            "inertia_c": self.inertia_c.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InertialParams":
        if "inertia_c" in d:
            return cls(d["mass"], d.get("first_moment", [0.0, 0.0, 0.0]), d["inertia_c"])
        return cls.from_com(d["mass"], d.get("p_off", [0.0, 0.0, 0.0]), d["J_s"])


def cobot_params() -> InertialParams:
    """Pre-grasp Space CoBot: body frame at its COM, diagonal inertia."""
    return InertialParams.from_com(COBOT_MASS, np.zeros(3), COBOT_INERTIA)


def with_point_load(base: InertialParams, load_mass: float, position, load_inertia=None) -> InertialParams:
    """Rigidly attach a load whose own COM sits at ``position`` (body frame).

    ``load_inertia`` is the load's inertia about its own COM (3 diagonal
    values or a 3x3 matrix); a point mass is assumed when omitted.
    """
    r = np.asarray(position, dtype=float)
    J_load = np.zeros((3, 3)) if load_inertia is None else np.asarray(load_inertia, dtype=float)
    if J_load.shape == (3,):
        J_load = np.diag(J_load)
    J_c = base.J_c + parallel_axis(J_load, load_mass, r)
    return InertialParams(base.mass + load_mass, base.first_moment + load_mass * r, vec_from_sym(J_c))


# Loads used by the experiment protocol (1.2 kg and 0.5 kg). Placement and
# the loads' own inertia are not published; these are declared defaults.
LOADS = {
    "load1": dict(load_mass=1.2, position=(0.10, -0.05, 0.08), load_inertia=(0.0020, 0.0030, 0.0025)),
    "load2": dict(load_mass=0.5, position=(-0.08, 0.10, -0.06), load_inertia=(0.0008, 0.0006, 0.0010)),
}


def grasped_params(load: str = "load1") -> InertialParams:
    return with_point_load(cobot_params(), **LOADS[load])


@dataclass
class RigidBodyState:
    """Position/velocity of ``P_c`` (inertial), attitude, body angular rate."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.omega])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "RigidBodyState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:10].copy(), x[10:13].copy())

    @classmethod
    def from_euler(cls, p, v, euler, omega) -> "RigidBodyState":
        return cls(p, v, euler_to_quat(*euler), omega)


@dataclass(frozen=True)
class Wrench:
    F: np.ndarray
    M: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.F, self.M])

    @classmethod
    def from_vector(cls, w) -> "Wrench":
        w = np.asarray(w, dtype=float)
        return cls(w[:3].copy(), w[3:6].copy())


class ActuationMatrix:
    """Mixing matrix mapping the six motor inputs to body force and moment."""

    def __init__(self, matrix):
        A = np.asarray(matrix, dtype=float)
        if A.shape != (6, 6) or not np.all(np.isfinite(A)):
            raise InvalidInputError("actuation matrix must be a finite 6x6 array")
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e12:
            raise InvalidInputError(f"actuation matrix is not invertible (cond={cond:.3g})")
        self.matrix = A
        self.inverse = np.linalg.inv(A)
        self.cond = cond

    @property
    def force_rows(self) -> np.ndarray:
        return self.matrix[:3]

    @property
    def moment_rows(self) -> np.ndarray:
        return self.matrix[3:]


def default_actuation_matrix(tilt_deg: float = 50.0, arm: float = 0.2, drag_ratio: float = 0.02,
                             force_capacity: float = 5.0, moment_capacity: float = 1.0) -> ActuationMatrix:
    """Illustrative hexarotor mixing matrix.

    Six bidirectional propellers on a hexagon of radius ``arm``, thrust axes
    tilted tangentially by alternating +/- ``tilt_deg``.  Rows are then
    scaled so that inputs in [-1, 1] produce pure body forces of at least
    ``force_capacity`` N and pure moments of at least ``moment_capacity``
    N*m on every axis.  Not the real Space CoBot geometry.
    """
    beta = np.deg2rad(tilt_deg)
    cols = []
    for i in range(6):
        th = i * np.pi / 3
        sign = (-1.0) ** i
        r = arm * np.array([np.cos(th), np.sin(th), 0.0])
        tangent = np.array([-np.sin(th), np.cos(th), 0.0])
        d = np.cos(beta) * np.array([0.0, 0.0, 1.0]) + sign * np.sin(beta) * tangent
        cols.append(np.concatenate([d, np.cross(r, d) + sign * drag_ratio * d]))
    A0 = np.array(cols).T
    capacity = 1.0 / np.abs(np.linalg.inv(A0)).max(axis=0)
    scale = np.concatenate([np.full(3, force_capacity / capacity[:3].min()),
                            np.full(3, moment_capacity / capacity[3:].min())])
    return ActuationMatrix(scale[:, None] * A0)


def wrench_from_actuation(A: ActuationMatrix, u) -> Wrench:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 6 or not np.all(np.isfinite(u)):
        raise InvalidInputError("actuator command must be a finite 6-vector")
    return Wrench.from_vector(A.matrix @ u)


def saturate(u, u_min, u_max):
    """Clamp a command; returns the clamped command and whether any channel hit a bound."""
    u = np.asarray(u, dtype=float)
    clamped = np.clip(u, u_min, u_max)
    return clamped, bool(np.any(clamped != u))


def _check_inertia(J_s: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(J_s)) or np.linalg.cond(J_s) > 1e12:
        raise SingularInertiaError("J_s is numerically singular")
    return np.linalg.inv(J_s)


def forward_dynamics(params: InertialParams, state: RigidBodyState, w: Wrench):
    """Accelerations ``(a_c, alpha)`` produced by wrench ``w``.

    ``a_c`` is the inertial acceleration of the body origin and ``alpha`` the
    body-frame angular acceleration.
    """
    J_s = params.J_s
    J_inv = _check_inertia(J_s)
    p, om, R = params.p_off, state.omega, state.R
    F, M = np.asarray(w.F, float), np.asarray(w.M, float)
    alpha = J_inv @ (M - np.cross(om, J_s @ om) - np.cross(p, F))
    a_c = R @ (F / params.mass - np.cross(alpha, p) - np.cross(om, np.cross(om, p)))
    return a_c, alpha


def inverse_dynamics(params: InertialParams, state: RigidBodyState, a_c, alpha) -> Wrench:
    """Wrench that produces the accelerations ``(a_c, alpha)`` in ``state``."""
    a_c = np.asarray(a_c, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if not (np.all(np.isfinite(a_c)) and np.all(np.isfinite(alpha))):
        raise InvalidInputError("accelerations must be finite")
    p, om, R = params.p_off, state.omega, state.R
    J_s = params.J_s
    F = params.mass * (R.T @ a_c + np.cross(alpha, p) + np.cross(om, np.cross(om, p)))
    M = J_s @ alpha + np.cross(om, J_s @ om) + np.cross(p, F)
    return Wrench(F, M)


# -- compiled integrator ---------------------------------------------------------------
# State layout: p(0:3) v(3:6) q(6:10) omega(10:13).


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _matvec(A, x):
    out = np.empty(3)
    for i in range(3):
        out[i] = A[i, 0] * x[0] + A[i, 1] * x[1] + A[i, 2] * x[2]
    return out


@njit(cache=True)
def _derivative(x, F, M, mass, p_off, J_s, J_inv):
    dx = np.empty(13)
    qw, qx, qy, qz = x[6], x[7], x[8], x[9]
    n = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    qw, qx, qy, qz = qw / n, qx / n, qy / n, qz / n
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * (qy * qy + qz * qz)
    R[0, 1] = 2 * (qx * qy - qw * qz)
    R[0, 2] = 2 * (qx * qz + qw * qy)
    R[1, 0] = 2 * (qx * qy + qw * qz)
    R[1, 1] = 1 - 2 * (qx * qx + qz * qz)
    R[1, 2] = 2 * (qy * qz - qw * qx)
    R[2, 0] = 2 * (qx * qz - qw * qy)
    R[2, 1] = 2 * (qy * qz + qw * qx)
    R[2, 2] = 1 - 2 * (qx * qx + qy * qy)
    om = x[10:13]
    rhs = M - _cross(om, _matvec(J_s, om)) - _cross(p_off, F)
    alpha = _matvec(J_inv, rhs)
    a_b = F / mass - _cross(alpha, p_off) - _cross(om, _cross(om, p_off))
    a = _matvec(R, a_b)
    wx, wy, wz = om[0], om[1], om[2]
    dx[0:3] = x[3:6]
    dx[3:6] = a
    dx[6] = 0.5 * (-x[7] * wx - x[8] * wy - x[9] * wz)
    dx[7] = 0.5 * (x[6] * wx + x[8] * wz - x[9] * wy)
    dx[8] = 0.5 * (x[6] * wy - x[7] * wz + x[9] * wx)
    dx[9] = 0.5 * (x[6] * wz + x[7] * wy - x[8] * wx)
    dx[10:13] = alpha
    return dx


@njit(cache=True)
def rk4_hold(x0, F, M, mass, p_off, J_s, J_inv, dt, nsteps):
    """Integrate ``nsteps`` RK4 steps of size ``dt`` under a constant body wrench."""
    x = x0.copy()
    for _ in range(nsteps):
        k1 = _derivative(x, F, M, mass, p_off, J_s, J_inv)
        k2 = _derivative(x + 0.5 * dt * k1, F, M, mass, p_off, J_s, J_inv)
        k3 = _derivative(x + 0.5 * dt * k2, F, M, mass, p_off, J_s, J_inv)
        k4 = _derivative(x + dt * k3, F, M, mass, p_off, J_s, J_inv)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        n = np.sqrt(x[6] ** 2 + x[7] ** 2 + x[8] ** 2 + x[9] ** 2)
        x[6:10] = x[6:10] / n
    return x


@njit(cache=True)
def rk4_rollout(x0, wrenches, mass, p_off, J_s, J_inv, dt, substeps):
    """Roll out a sequence of held wrenches; returns the ``len(wrenches)+1`` states."""
    n = wrenches.shape[0]
    out = np.empty((n + 1, 13))
    out[0] = x0
    x = x0.copy()
    h = dt / substeps
    for k in range(n):
        x = rk4_hold(x, wrenches[k, 0:3], wrenches[k, 3:6], mass, p_off, J_s, J_inv, h, substeps)
        out[k + 1] = x
    return out


def model_arrays(params: InertialParams):
    """Arguments expected by the compiled kernels for ``params``."""
    J_s = params.J_s
    return params.mass, params.p_off.copy(), np.ascontiguousarray(J_s), _check_inertia(J_s)


def integrate_step(params: InertialParams, state: RigidBodyState, u, dt: float,
                   actuation: ActuationMatrix | None = None) -> RigidBodyState:
    """One RK4 step of size ``dt`` with the command ``u`` held constant."""
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    A = actuation if actuation is not None else default_actuation_matrix()
    w = wrench_from_actuation(A, u)
    x = rk4_hold(state.to_array(), w.F, w.M, *model_arrays(params), float(dt), 1)
    return RigidBodyState.from_array(x)


def quat_derivative(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Quaternion kinematics ``q_dot = 0.5 q ⊗ (0, omega)``."""
    return 0.5 * quat_multiply(q, np.concatenate([[0.0], omega]))


__all__ = [
    "ActuationMatrix",
    "InertialParams",
    "RigidBodyState",
    "Wrench",
    "cobot_params",
    "default_actuation_matrix",
    "forward_dynamics",
    "grasped_params",
    "integrate_step",
    "inverse_dynamics",
    "parallel_axis",
    "parallel_axis_inv",
    "quat_derivative",
    "quat_normalize",
    "saturate",
    "skew",
    "with_point_load",
    "wrench_from_actuation",
]
