"""Tracking of excitation trajectories with a model that uses stale parameters.

Two controllers share one interface (``reset()`` and ``step(x, window)``):

* :class:`MPCController`: receding-horizon, single-shooting Gauss-Newton on
  the nominal rigid-body model with box-constrained motor inputs.
* :class:`ComputedWrenchController`: inverse dynamics on the nominal model
  plus PD correction, mapped through ``A^-1`` and clamped.

:func:`track_trajectory` closes the loop around the true plant and produces a
:class:`MeasurementLog`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear
from scipy.linalg import solve_triangular

from .dynamics import (
    ActuationMatrix,
    InertialParams,
    RigidBodyState,
    Wrench,
    default_actuation_matrix,
    inverse_dynamics,
    model_arrays,
    rk4_hold,
    rk4_rollout,
)
from .errors import InvalidInputError, InvalidWindowError
from .regressor import euler_kinematics
from .rotations import euler_to_quat, matrix_to_euler, quat_to_matrix, skew, vee
from .trajectory import FourierTrajectory

log = logging.getLogger(__name__)

LOG_COLUMNS = ["t", "x", "y", "z", "phi", "theta", "psi", "u1", "u2", "u3", "u4", "u5", "u6", "sat_flag"]


def attitude_error(q_des, q) -> np.ndarray:
    """Geometric attitude error ``0.5 vee(R_d^T R - R^T R_d)``."""
    return _attitude_error_R(quat_to_matrix(q_des), quat_to_matrix(q))


def _attitude_error_R(R_d, R):
    # vee() keeps only the antisymmetric part, which supplies the factor 0.5
    return vee(np.swapaxes(R_d, -1, -2) @ R)


@dataclass
class ReferenceWindow:
    """Desired states at ``H+1`` instants spaced by the control period."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    a: np.ndarray
    alpha: np.ndarray

    def __len__(self):
        return self.p.shape[0]

    def __getitem__(self, sl) -> "ReferenceWindow":
        return ReferenceWindow(self.p[sl], self.v[sl], self.R[sl], self.omega[sl], self.a[sl], self.alpha[sl])

    @classmethod
    def from_pose(cls, X, Xd, Xdd) -> "ReferenceWindow":
        X, Xd, Xdd = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (X, Xd, Xdd))
        R, omega, alpha = euler_kinematics(X[:, 3], X[:, 4], X[:, 5], Xd[:, 3:6], Xdd[:, 3:6])
        return cls(X[:, :3].copy(), Xd[:, :3].copy(), R, omega, Xdd[:, :3].copy(), alpha)

    @classmethod
    def from_trajectory(cls, traj: FourierTrajectory, times) -> "ReferenceWindow":
        return cls.from_pose(*traj.eval(np.asarray(times, dtype=float)))

    @classmethod
    def rest(cls, length: int, p=(0.0, 0.0, 0.0), euler=(0.0, 0.0, 0.0)) -> "ReferenceWindow":
        X = np.tile(np.concatenate([p, euler]), (length, 1))
        return cls.from_pose(X, np.zeros_like(X), np.zeros_like(X))


@dataclass
class ControllerConfig:
    """Tracking-controller settings.

    ``Q`` weighs the 12-dim error (position, velocity, attitude, rate),
    ``Q_N`` the terminal error and ``P`` the six motor inputs.
    """

    nominal_params: InertialParams
    horizon: float = 1.0
    dt_c: float = 0.02
    Q: np.ndarray = field(default_factory=lambda: np.repeat([40.0, 1.0, 40.0, 1.0], 3))
    Q_N: np.ndarray | None = None
    P: np.ndarray = field(default_factory=lambda: np.full(6, 0.01))
    u_min: np.ndarray = field(default_factory=lambda: np.full(6, -1.0))
    u_max: np.ndarray = field(default_factory=lambda: np.full(6, 1.0))
    iterations: int = 2
    blocks: tuple | None = None
    substeps: int = 2
    kind: str = "mpc"
    # gains of the computed-wrench alternative
    kp: float = 4.0
    kd: float = 4.0
    kr: float = 32.0
    kw: float = 8.0

    def __post_init__(self):
        self.Q = _diag_vector(self.Q, 12, "Q")
        self.Q_N = 10.0 * self.Q if self.Q_N is None else _diag_vector(self.Q_N, 12, "Q_N")
        self.P = _diag_vector(self.P, 6, "P")
        self.u_min = np.broadcast_to(np.asarray(self.u_min, dtype=float), (6,)).copy()
        self.u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (6,)).copy()
        if not (self.horizon >= self.dt_c > 0):
            raise InvalidInputError("need horizon >= dt_c > 0")
        if np.any(self.u_min > 0) or np.any(self.u_max < 0):
            raise InvalidInputError("input bounds must contain zero")
        if self.kind not in ("mpc", "pd"):
            raise InvalidInputError(f"unknown controller kind {self.kind!r}")
        if self.blocks is None:
            self.blocks = default_blocks(self.steps)
        if sum(self.blocks) != self.steps:
            raise InvalidInputError("input blocks must cover the horizon exactly")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt_c))


def _diag_vector(v, size, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        v = np.diag(v)
    v = np.broadcast_to(v, (size,)).copy()
    if np.any(v < 0):
        raise InvalidInputError(f"{name} must be positive semi-definite")
    return v


def default_blocks(steps: int) -> tuple:
    """Move-blocking pattern: fine near the present, coarse toward the horizon."""
    sizes, pattern = [], [1, 1, 2, 2, 4]
    total = 0
    while total < steps:
        s = pattern[len(sizes)] if len(sizes) < len(pattern) else 8
        s = min(s, steps - total)
        sizes.append(s)
        total += s
    return tuple(sizes)


class MPCController:
    """Gauss-Newton receding-horizon tracker over the nominal model.

    Decision variables are the motor inputs on a move-blocked grid.  Each
    iteration rolls the nominal model out with RK4, linearises the error
    dynamics analytically along the rollout and solves the resulting
    bounded least-squares problem.  The solution is warm-started by shifting
    the previous one.
    """

    def __init__(self, cfg: ControllerConfig, actuation: ActuationMatrix | None = None):
        self.cfg = cfg
        self.A = actuation or default_actuation_matrix()
        self.H = cfg.steps
        self.model = model_arrays(cfg.nominal_params)
        sizes = np.asarray(cfg.blocks)
        self.block_of_step = np.repeat(np.arange(len(sizes)), sizes)
        self.block_sizes = sizes
        self.nb = len(sizes)
        self.sqrtQ = np.sqrt(cfg.Q)
        self.sqrtQN = np.sqrt(cfg.Q_N)
        self.sqrtP = np.sqrt(cfg.P)
        self.reset()

    def reset(self):
        self.U = np.zeros((self.nb, 6))

    def _shift(self):
        steps = self.U[self.block_of_step]
        steps = np.vstack([steps[1:], steps[-1:]])
        out = np.zeros_like(self.U)
        np.add.at(out, self.block_of_step, steps)
        self.U = out / self.block_sizes[:, None]

    def step(self, x: np.ndarray, ref: ReferenceWindow):
        """Return ``(u, clamped)`` for state array ``x`` and a window of ``H+1`` references."""
        if len(ref) < self.H + 1:
            raise InvalidWindowError(f"reference window has {len(ref)} samples, need {self.H + 1}")
        ref = ref[: self.H + 1]
        cfg = self.cfg
        lo = np.broadcast_to(cfg.u_min, self.U.shape)
        hi = np.broadcast_to(cfg.u_max, self.U.shape)
        self.U = np.clip(self.U, lo, hi)
        for _ in range(cfg.iterations):
            self.U = np.clip(self.U + self._gn_step(x, ref), lo, hi)
        u_raw = self.U[0].copy()
        u = np.clip(u_raw, cfg.u_min, cfg.u_max)
        clamped = bool(np.any(u_raw <= cfg.u_min) or np.any(u_raw >= cfg.u_max))
        self._shift()
        return u, clamped

    def _gn_step(self, x, ref):
        cfg, H, nb = self.cfg, self.H, self.nb
        Amat = self.A.matrix
        U_steps = self.U[self.block_of_step]
        wrenches = U_steps @ Amat.T
        xs = rk4_rollout(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(wrenches),
                         *self.model, cfg.dt_c, cfg.substeps)
        Ad, Bd = self._linearize(xs[:-1], wrenches)
        errs, C = _tracking_errors(xs[1:], ref[1:])

        # sensitivities of the state at k+1 to the blocked inputs
        Jrows = np.empty((H, 12, nb * 6))
        S = np.zeros((12, nb * 6))
        for k in range(H):
            S = Ad[k] @ S
            b = self.block_of_step[k]
            S[:, 6 * b:6 * b + 6] += Bd[k]
            Jrows[k] = C[k] @ S
        w = np.vstack([np.tile(self.sqrtQ, (H - 1, 1)), self.sqrtQN[None]])
        J = (w[:, :, None] * Jrows).reshape(H * 12, nb * 6)
        r = (w * errs).reshape(-1)
        # effort: sum over steps of u^T P u, i.e. block size times block cost
        wu = (np.sqrt(self.block_sizes)[:, None] * self.sqrtP[None, :]).reshape(-1)
        Uf = self.U.reshape(-1)
        Jfull = np.vstack([J, np.diag(wu)])
        rfull = np.concatenate([r, wu * Uf])
        HtH = Jfull.T @ Jfull
        g = Jfull.T @ rfull
        delta = -np.linalg.solve(HtH + 1e-9 * np.eye(HtH.shape[0]), g)
        lo = np.tile(cfg.u_min, nb) - Uf
        hi = np.tile(cfg.u_max, nb) - Uf
        if np.any(delta < lo - 1e-12) or np.any(delta > hi + 1e-12):
            # same objective through the square Cholesky factor: |L^T d + L^-1 g|^2
            L = np.linalg.cholesky(HtH + 1e-9 * np.eye(HtH.shape[0]))
            res = lsq_linear(L.T, -solve_triangular(L, g, lower=True),
                             bounds=(np.minimum(lo, 0.0), np.maximum(hi, 0.0)), method="bvls", tol=1e-10)
            delta = res.x
        return delta.reshape(nb, 6)

    def _linearize(self, xs, wrenches):
        """Discrete error-state Jacobians along a rollout (right attitude perturbation)."""
        mass, p, J_s, J_inv = self.model
        dt = self.cfg.dt_c
        H = xs.shape[0]
        R = quat_to_matrix(xs[:, 6:10])
        om = xs[:, 10:13]
        F, M = wrenches[:, :3], wrenches[:, 3:]
        A_F, A_M = self.A.force_rows, self.A.moment_rows
        Sp = skew(p)
        Jw = om @ J_s.T
        alpha = (M - np.cross(om, Jw) - np.cross(p, F)) @ J_inv.T
        a_b = F / mass - np.cross(alpha, p) - np.cross(om, np.cross(om, p))
        K_aw = -J_inv @ (skew(om) @ J_s - skew(Jw))  # (H,3,3)
        dalpha_du = J_inv @ (A_M - Sp @ A_F)  # (3,6)
        dab_du = A_F / mass + Sp @ dalpha_du
        wp = np.einsum("hi,i->h", om, p)
        dab_dw = Sp @ K_aw - (wp[:, None, None] * np.eye(3) + om[:, :, None] * p[None, None, :]
                              - 2.0 * p[None, :, None] * om[:, None, :])
        Ac = np.zeros((H, 12, 12))
        Bc = np.zeros((H, 12, 6))
        Ac[:, 0:3, 3:6] = np.eye(3)
        Ac[:, 3:6, 6:9] = -R @ skew(a_b)
        Ac[:, 3:6, 9:12] = R @ dab_dw
        Ac[:, 6:9, 6:9] = -skew(om)
        Ac[:, 6:9, 9:12] = np.eye(3)
        Ac[:, 9:12, 9:12] = K_aw
        Bc[:, 3:6] = R @ dab_du
        Bc[:, 9:12] = dalpha_du
        Adt = Ac * dt
        Ad = np.eye(12) + Adt + 0.5 * Adt @ Adt
        Bd = (np.eye(12) * dt + 0.5 * dt * Adt) @ Bc
        return Ad, Bd


def _tracking_errors(xs, ref: ReferenceWindow):
    """Stacked 12-dim errors and their Jacobians w.r.t. the error state."""
    R = quat_to_matrix(xs[:, 6:10])
    E = np.swapaxes(ref.R, -1, -2) @ R
    e_R = vee(E)
    w_ref = np.einsum("hji,hjk,hk->hi", R, ref.R, ref.omega)  # R^T R_d omega_d
    errs = np.concatenate([xs[:, 0:3] - ref.p, xs[:, 3:6] - ref.v, e_R, xs[:, 10:13] - w_ref], axis=1)
    n = xs.shape[0]
    C = np.zeros((n, 12, 12))
    C[:, 0:3, 0:3] = np.eye(3)
    C[:, 3:6, 3:6] = np.eye(3)
    trE = np.trace(E, axis1=1, axis2=2)
    C[:, 6:9, 6:9] = 0.5 * (trE[:, None, None] * np.eye(3) - np.swapaxes(E, -1, -2))
    C[:, 9:12, 6:9] = -skew(w_ref)
    C[:, 9:12, 9:12] = np.eye(3)
    return errs, C


class ComputedWrenchController:
    """Nominal inverse dynamics with PD correction; same interface as the MPC."""

    def __init__(self, cfg: ControllerConfig, actuation: ActuationMatrix | None = None):
        self.cfg = cfg
        self.A = actuation or default_actuation_matrix()
        self.H = 0

    def reset(self):
        pass

    def step(self, x: np.ndarray, ref: ReferenceWindow):
        if len(ref) < 1:
            raise InvalidWindowError("reference window is empty")
        cfg = self.cfg
        state = RigidBodyState.from_array(x)
        R = state.R
        e_p = state.p - ref.p[0]
        e_v = state.v - ref.v[0]
        e_R = _attitude_error_R(ref.R[0], R)
        R_rel = R.T @ ref.R[0]
        w_ref = R_rel @ ref.omega[0]
        e_w = state.omega - w_ref
        a_cmd = ref.a[0] - cfg.kp * e_p - cfg.kd * e_v
        alpha_ff = R_rel @ ref.alpha[0] - np.cross(state.omega, w_ref)
        alpha_cmd = alpha_ff - cfg.kr * e_R - cfg.kw * e_w
        wrench = inverse_dynamics(cfg.nominal_params, state, a_cmd, alpha_cmd)
        u_raw = self.A.inverse @ wrench.vector
        u = np.clip(u_raw, cfg.u_min, cfg.u_max)
        return u, bool(np.any(u != u_raw))


def make_controller(cfg: ControllerConfig, actuation: ActuationMatrix | None = None):
    if cfg.kind == "pd":
        return ComputedWrenchController(cfg, actuation)
    return MPCController(cfg, actuation)


def control_step(cfg: ControllerConfig, state: RigidBodyState, ref: ReferenceWindow,
                 actuation: ActuationMatrix | None = None, controller=None):
    """One saturated command for ``state`` given a reference window.

    Pass a persistent ``controller`` to keep the warm start between calls.
    """
    ctrl = controller or make_controller(cfg, actuation)
    u, _ = ctrl.step(state.to_array(), ref)
    return u


@dataclass
class NoiseModel:
    """Additive white Gaussian noise on logged position (m) and Euler angles (rad)."""

    sigma_pos: float = 0.002
    sigma_angle: float = float(np.deg2rad(0.2))

    def apply(self, pose: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(pose.shape)
        scale = np.array([self.sigma_pos] * 3 + [self.sigma_angle] * 3)
        return pose + noise * scale


@dataclass
class MeasurementLog:
    """Logged poses and motor commands sampled at ``f_s``.

    ``u`` holds the command in effect at each sample time and ``sat`` flags
    samples whose command was clamped.
    """

    t: np.ndarray
    pose: np.ndarray
    u: np.ndarray
    sat: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.pose = np.asarray(self.pose, dtype=float).reshape(-1, 6)
        self.u = np.asarray(self.u, dtype=float).reshape(-1, 6)
        self.sat = np.asarray(self.sat, dtype=bool)

    @property
    def f_s(self) -> float:
        return float(self.meta["f_s"])

    @property
    def T_f(self) -> float:
        return float(self.meta["T_f"])

    @property
    def cycles(self) -> int:
        return int(self.meta["C"])

    @property
    def duration(self) -> float:
        return len(self.t) / self.f_s

    @property
    def saturation_fraction(self) -> float:
        return float(self.meta.get("saturation_fraction", 0.0))

    def with_noise(self, noise: NoiseModel, rng: np.random.Generator) -> "MeasurementLog":
        meta = dict(self.meta)
        meta["noise"] = {"sigma_pos": noise.sigma_pos, "sigma_angle": noise.sigma_angle}
        return MeasurementLog(self.t.copy(), noise.apply(self.pose, rng), self.u.copy(), self.sat.copy(), meta)

    def first_cycles(self, C: int) -> "MeasurementLog":
        n = int(round(C * self.T_f * self.f_s))
        meta = dict(self.meta, C=C)
        return MeasurementLog(self.t[:n], self.pose[:n], self.u[:n], self.sat[:n], meta)

    def to_csv(self, path) -> None:
        path = Path(path)
        data = np.column_stack([self.t, self.pose, self.u, self.sat.astype(int)])
        header = ",".join(LOG_COLUMNS)
        fmt = ["%.17g"] * 13 + ["%d"]
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)
        path.with_suffix(".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "MeasurementLog":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
        if header != LOG_COLUMNS:
            raise InvalidInputError(f"unexpected log columns: {header}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        sidecar = path.with_suffix(".json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(data[:, 0], data[:, 1:7], data[:, 7:13], data[:, 13] != 0, meta)


def track_trajectory(cfg: ControllerConfig, params_true: InertialParams, traj: FourierTrajectory,
                     C: int, noise: NoiseModel | None = None, seed: int = 0,
                     actuation: ActuationMatrix | None = None, f_s: float = 100.0,
                     dt: float = 1e-3, return_states: bool = False, warmup_cycles: int = 1):
    """Simulate ``C`` periods of closed-loop tracking on the true plant.

    The controller sees the exact state; noise only enters the logged poses.
    The robot starts at rest on the reference and runs ``warmup_cycles``
    unlogged periods first so the start-up transient stays out of the log.
    Commands are held between control instants; ``meta["hold_samples"]``
    records the hold length in log samples when it is a whole number.
    """
    if C < 1 or warmup_cycles < 0:
        raise InvalidInputError("need at least one cycle and a non-negative warm-up")
    A = actuation or default_actuation_matrix()
    ctrl = make_controller(cfg, A)
    T_f = traj.period
    n_ctrl = int(round((C + warmup_cycles) * T_f / cfg.dt_c))
    per_ctrl = int(round(cfg.dt_c / dt))
    per_sample = int(round(1.0 / (f_s * dt)))
    if abs(per_ctrl * dt - cfg.dt_c) > 1e-12 or abs(per_sample * dt * f_s - 1.0) > 1e-9:
        raise InvalidInputError("dt_c and 1/f_s must be integer multiples of dt")
    n_samples = int(round(C * T_f * f_s))
    if abs(n_samples - C * T_f * f_s) > 1e-6:
        raise InvalidInputError("T_f * f_s must be an integer")
    skip = int(round(warmup_cycles * T_f * f_s))
    n_ctrl_skip = int(round(warmup_cycles * T_f / cfg.dt_c))

    H = getattr(ctrl, "H", 0)
    ref_all = ReferenceWindow.from_trajectory(traj, np.arange(n_ctrl + H + 1) * cfg.dt_c)
    X0, Xd0, _ = traj.eval(0.0)
    x = RigidBodyState.from_euler(X0[:3], Xd0[:3], X0[3:], ref_all.omega[0]).to_array()
    model = model_arrays(params_true)

    pose = np.empty((n_samples, 6))
    u_log = np.empty((n_samples, 6))
    sat_log = np.zeros(n_samples, dtype=bool)
    states = np.empty((n_samples, 13)) if return_states else None
    total = n_ctrl * per_ctrl
    n_clamped = 0
    u = np.zeros(6)
    clamped = False
    i = 0
    while i < total:
        if i % per_ctrl == 0:
            k = i // per_ctrl
            u, clamped = ctrl.step(x, ref_all[k:k + H + 1])
            n_clamped += clamped and k >= n_ctrl_skip
            w = A.matrix @ u
        if i % per_sample == 0:
            j = i // per_sample - skip
            if 0 <= j < n_samples:
                pose[j, :3] = x[:3]
                pose[j, 3:] = matrix_to_euler(quat_to_matrix(x[6:10]))
                u_log[j] = u
                sat_log[j] = clamped
                if return_states:
                    states[j] = x
        nxt = min((i // per_ctrl + 1) * per_ctrl, (i // per_sample + 1) * per_sample, total)
        x = rk4_hold(x, w[:3], w[3:], *model, dt, nxt - i)
        i = nxt

    meta = {
        "T_f": T_f,
        "C": C,
        "f_s": f_s,
        "dt": dt,
        "dt_c": cfg.dt_c,
        "seed": seed,
        "controller": cfg.kind,
        "warmup_cycles": warmup_cycles,
        "saturation_fraction": n_clamped / (n_ctrl - n_ctrl_skip),
    }
    hold = cfg.dt_c * f_s
    if abs(hold - round(hold)) < 1e-9 and round(T_f * f_s) % round(hold) == 0:
        meta["hold_samples"] = int(round(hold))
    result = MeasurementLog(np.arange(n_samples) / f_s, pose, u_log, sat_log, meta)
    if noise is not None:
        result = result.with_noise(noise, np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1]))
    if return_states:
        return result, states
    return result


def ideal_log(params: InertialParams, traj: FourierTrajectory, C: int, f_s: float = 100.0,
              actuation: ActuationMatrix | None = None) -> MeasurementLog:
    """Log of perfect tracking: poses from the reference, commands from exact inverse dynamics."""
    A = actuation or default_actuation_matrix()
    T_f = traj.period
    n = int(round(C * T_f * f_s))
    t = np.arange(n) / f_s
    X, Xd, Xdd = traj.eval(t)
    R, omega, alpha = euler_kinematics(X[:, 3], X[:, 4], X[:, 5], Xd[:, 3:6], Xdd[:, 3:6])
    u = np.empty((n, 6))
    for j in range(n):
        state = RigidBodyState(X[j, :3], Xd[j, :3], euler_to_quat(*X[j, 3:]), omega[j])
        u[j] = A.inverse @ inverse_dynamics(params, state, Xdd[j, :3], alpha[j]).vector
    pose = X.copy()
    pose[:, 3:] = matrix_to_euler(R)
    meta = {"T_f": T_f, "C": C, "f_s": f_s, "controller": "ideal", "saturation_fraction": 0.0}
    return MeasurementLog(t, pose, u, np.zeros(n, dtype=bool), meta)
