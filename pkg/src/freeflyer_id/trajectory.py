"""Periodic Fourier excitation trajectories and their optimisation.

Each of the six pose coordinates (x, y, z, phi, theta, psi) is a truncated
Fourier series parameterised at the velocity level::

    X(t)   = a0 + sum_k  a_k/(w k) sin(w k t) - b_k/(w k) cos(w k t)
    Xd(t)  =      sum_k  a_k cos(w k t) + b_k sin(w k t)
    Xdd(t) =      sum_k -a_k w k sin(w k t) + b_k w k cos(w k t)

Rest conditions at both ends of the period are linear in the coefficients and
are removed by a null-space parameterisation; box limits on pose, rate and
acceleration are linear inequalities at the collocation samples.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .dynamics import ActuationMatrix, default_actuation_matrix
from .errors import InfeasibleConfigError, InvalidInputError
from .regressor import GIMBAL_COS_MIN, kinematics_from_pose, regressor_row

log = logging.getLogger(__name__)

AXES = ("x", "y", "z", "phi", "theta", "psi")


@dataclass
class FourierTrajectory:
    """Per-axis coefficients: ``a0`` (6,), ``a`` and ``b`` (6, n)."""

    omega_f: float
    a0: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.omega_f = float(self.omega_f)
        self.a0 = np.asarray(self.a0, dtype=float).reshape(6)
        self.a = np.asarray(self.a, dtype=float).reshape(6, -1)
        self.b = np.asarray(self.b, dtype=float).reshape(6, -1)
        if self.a.shape != self.b.shape:
            raise InvalidInputError("a and b must have the same shape")

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega_f

    @classmethod
    def zeros(cls, omega_f: float, n: int) -> "FourierTrajectory":
        return cls(omega_f, np.zeros(6), np.zeros((6, n)), np.zeros((6, n)))

    @classmethod
    def from_delta(cls, omega_f: float, n: int, delta: np.ndarray) -> "FourierTrajectory":
        """From the flat coefficient vector laid out per axis as [a0, a_1..a_n, b_1..b_n]."""
        d = np.asarray(delta, dtype=float).reshape(6, 1 + 2 * n)
        return cls(omega_f, d[:, 0], d[:, 1:n + 1], d[:, n + 1:])

    @property
    def delta(self) -> np.ndarray:
        return np.concatenate([self.a0[:, None], self.a, self.b], axis=1).reshape(-1)

    def eval(self, t):
        """Pose, rate and acceleration at times ``t``; each ``(len(t), 6)`` or ``(6,)``."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        wk = self.omega_f * np.arange(1, self.n + 1)
        arg = np.outer(t, wk)
        s, c = np.sin(arg), np.cos(arg)
        X = self.a0 + s @ (self.a / wk).T - c @ (self.b / wk).T
        Xd = c @ self.a.T + s @ self.b.T
        Xdd = -s @ (self.a * wk).T + c @ (self.b * wk).T
        if scalar:
            return X[0], Xd[0], Xdd[0]
        return X, Xd, Xdd

    def to_dict(self) -> dict:
        return {
            "omega_f": self.omega_f,
            "n": self.n,
            "axes": [{"a0": float(self.a0[i]), "a": self.a[i].tolist(), "b": self.b[i].tolist()} for i in range(6)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FourierTrajectory":
        axes = d["axes"]
        if len(axes) != 6:
            raise InvalidInputError("trajectory must have 6 axes")
        n = int(d["n"])
        a = np.array([ax["a"] for ax in axes], dtype=float).reshape(6, n)
        b = np.array([ax["b"] for ax in axes], dtype=float).reshape(6, n)
        return cls(d["omega_f"], [ax["a0"] for ax in axes], a, b)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "FourierTrajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))


def basis_matrices(omega_f: float, n: int, t):
    """Rows mapping one axis' ``[a0, a_1..a_n, b_1..b_n]`` to X, Xd, Xdd at times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    wk = omega_f * np.arange(1, n + 1)
    arg = np.outer(t, wk)
    s, c = np.sin(arg), np.cos(arg)
    ones, zeros = np.ones((t.size, 1)), np.zeros((t.size, 1))
    GX = np.hstack([ones, s / wk, -c / wk])
    GXd = np.hstack([zeros, c, s])
    GXdd = np.hstack([zeros, -s * wk, c * wk])
    return GX, GXd, GXdd


def rest_nullspace(omega_f: float, n: int) -> np.ndarray:
    """Orthonormal basis (per axis) of coefficients with X, Xd, Xdd = 0 at t=0 and t=T_f."""
    GX, GXd, GXdd = basis_matrices(omega_f, n, [0.0, 2 * np.pi / omega_f])
    C = np.vstack([GX, GXd, GXdd])
    _, s, Vt = np.linalg.svd(C)
    rank = int(np.sum(s > s[0] * 1e-10))
    return Vt[rank:].T


def default_sigma(actuation: ActuationMatrix | None = None, sigma_u: float = 0.01) -> np.ndarray:
    """Wrench covariance implied by i.i.d. actuator noise: ``A diag(sigma_u^2) A^T``."""
    A = (actuation or default_actuation_matrix()).matrix
    return A @ np.diag(np.full(6, sigma_u ** 2)) @ A.T


@dataclass
class ExcitationConfig:
    T_f: float = 10.0
    n: int = 3
    x_max: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5, 0.4, 0.4, 0.4]))
    xd_max: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5, 0.5, 0.5, 0.5]))
    xdd_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0]))
    x_min: np.ndarray | None = None
    xd_min: np.ndarray | None = None
    xdd_min: np.ndarray | None = None
    criterion: str = "J1"
    sigma: np.ndarray | None = None
    N: int = 60
    multistart: int = 24
    maxiter: int = 200

    def __post_init__(self):
        for name in ("x_max", "xd_max", "xdd_max"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (6,)).copy())
        for lo, hi in (("x_min", "x_max"), ("xd_min", "xd_max"), ("xdd_min", "xdd_max")):
            if getattr(self, lo) is None:
                setattr(self, lo, -getattr(self, hi))
            else:
                setattr(self, lo, np.broadcast_to(np.asarray(getattr(self, lo), dtype=float), (6,)).copy())
        if self.sigma is None:
            self.sigma = default_sigma()
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.validate()

    @property
    def omega_f(self) -> float:
        return 2 * np.pi / self.T_f

    @property
    def lower(self) -> np.ndarray:
        return np.stack([self.x_min, self.xd_min, self.xdd_min])

    @property
    def upper(self) -> np.ndarray:
        return np.stack([self.x_max, self.xd_max, self.xdd_max])

    def validate(self) -> None:
        if not self.T_f > 0:
            raise InvalidInputError("T_f must be positive")
        if self.n < 1:
            raise InvalidInputError("n must be >= 1")
        if self.N < 10 * self.n:
            raise InvalidInputError(f"N={self.N} must be at least 10*n={10 * self.n}")
        if self.criterion not in ("J1", "J2"):
            raise InvalidInputError(f"unknown criterion {self.criterion!r}")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InvalidInputError("bounds must be finite")
        pitch = max(abs(self.x_min[4]), abs(self.x_max[4]))
        if pitch >= np.pi / 2 - 0.05:
            raise InvalidInputError("pitch bounds must stay clear of +/- 90 deg")
        if np.any(self.lower > 0) or np.any(self.upper < 0):
            raise InvalidInputError("bounds must contain the rest pose")
        if self.sigma.shape != (6, 6):
            raise InvalidInputError("sigma must be 6x6")
        if self.multistart < 1:
            raise InvalidInputError("multistart must be >= 1")


def sample_times(T_f: float, N: int) -> np.ndarray:
    return np.arange(N) * (T_f / N)


def _whitener(sigma: np.ndarray) -> np.ndarray:
    """``L^-1`` with ``sigma = L L^T``; ``(L^-1 W)^T (L^-1 W) = W^T sigma^-1 W``."""
    return np.linalg.inv(np.linalg.cholesky(sigma))


def regressor_from_pose(X, Xd, Xdd) -> np.ndarray:
    """Stacked regressor ``(..., 6N, 10)`` for pose samples ``(..., N, 6)``."""
    R, omega, alpha, a_c, _ = kinematics_from_pose(X, Xd, Xdd)
    gamma = regressor_row(R, omega, alpha, a_c)
    return gamma.reshape(gamma.shape[:-3] + (-1, 10))


def criterion_J1(W: np.ndarray, sigma: np.ndarray | None = None) -> np.ndarray:
    """Condition number of the noise-normalised stacked regressor.

    ``W`` may carry leading batch axes.  Returns ``inf`` for rank-deficient
    input.
    """
    W = _normalise(W, sigma)
    s = np.linalg.svd(W, compute_uv=False)
    smax, smin = s[..., 0], s[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(smin > smax * 1e-12, smax / smin, np.inf)
    return out if out.ndim else float(out)


def criterion_J2(W: np.ndarray, sigma: np.ndarray | None = None) -> np.ndarray:
    """``-log det(W^T sigma^-1 W)``; ``inf`` when the information matrix is not PD."""
    W = _normalise(W, sigma)
    info = np.swapaxes(W, -1, -2) @ W
    ev = np.linalg.eigvalsh(info)
    ok = ev[..., 0] > ev[..., -1] * 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ok, -np.sum(np.log(np.where(ev > 0, ev, 1.0)), axis=-1), np.inf)
    return out if out.ndim else float(out)


def _normalise(W, sigma):
    W = np.asarray(W, dtype=float)
    if sigma is None:
        return W
    Linv = _whitener(np.asarray(sigma, dtype=float))
    blocks = W.reshape(W.shape[:-2] + (-1, 6, 10))
    return (Linv @ blocks).reshape(W.shape)


CRITERIA = {"J1": criterion_J1, "J2": criterion_J2}


class _Problem:
    """Reduced-coordinate view of one excitation design problem."""

    def __init__(self, cfg: ExcitationConfig):
        self.cfg = cfg
        n, w = cfg.n, cfg.omega_f
        self.basis = rest_nullspace(w, n)  # (1+2n, r)
        self.r = self.basis.shape[1]
        t = sample_times(cfg.T_f, cfg.N)
        G = [g @ self.basis for g in basis_matrices(w, n, t)]  # each (N, r)
        self.G = np.stack(G)  # (3, N, r): pose, rate, accel rows for one axis
        self.Linv = _whitener(cfg.sigma)
        self.crit = CRITERIA[cfg.criterion]

    @property
    def dim(self) -> int:
        return 6 * self.r

    def delta(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z).reshape(-1, 6, self.r) @ self.basis.T).reshape(np.shape(z)[:-1] + (-1,))

    def trajectory(self, z) -> FourierTrajectory:
        return FourierTrajectory.from_delta(self.cfg.omega_f, self.cfg.n, self.delta(z))

    def kinematics(self, Z: np.ndarray):
        """``(B, 3, N, 6)`` pose/rate/accel samples for ``(B, dim)`` reduced coordinates."""
        Z = np.asarray(Z, dtype=float).reshape(-1, 6, self.r)
        return np.einsum("qnr,bar->bqna", self.G, Z)

    def objective(self, Z: np.ndarray) -> np.ndarray:
        K = self.kinematics(Z)
        # SLSQP may probe infeasible points; those near gimbal lock score inf
        bad = np.any(np.abs(np.cos(K[:, 0, :, 4])) < 2 * GIMBAL_COS_MIN, axis=-1)
        K[bad] = 0.0
        W = regressor_from_pose(K[:, 0], K[:, 1], K[:, 2])
        blocks = W.reshape(W.shape[0], -1, 6, 10)
        W = (self.Linv @ blocks).reshape(W.shape)
        return np.where(bad, np.inf, self.crit(W))

    def violation(self, z: np.ndarray) -> float:
        K = self.kinematics(z)[0]
        lo = self.cfg.lower[:, None, :]
        hi = self.cfg.upper[:, None, :]
        return float(max(np.max(K - hi), np.max(lo - K), 0.0))

    def scale_into_bounds(self, z: np.ndarray, margin: float = 1.0) -> np.ndarray:
        """Shrink ``z`` toward the rest trajectory until every sample is in bounds."""
        K = self.kinematics(z)[0]
        hi = np.broadcast_to(self.cfg.upper[:, None, :], K.shape)
        lo = np.broadcast_to(self.cfg.lower[:, None, :], K.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(K > 0, hi / K, np.where(K < 0, lo / K, np.inf))
        s = min(1.0, margin * float(np.min(ratio)))
        return np.asarray(z, dtype=float) * max(s, 0.0)

    def constraints(self):
        """Linear inequalities ``C z <= h`` at every collocation sample."""
        N = self.cfg.N
        rows, rhs = [], []
        for axis in range(6):
            for q in range(3):
                block = np.zeros((N, self.dim))
                block[:, axis * self.r:(axis + 1) * self.r] = self.G[q]
                rows += [block, -block]
                rhs += [np.full(N, self.cfg.upper[q, axis]), np.full(N, -self.cfg.lower[q, axis])]
        return np.vstack(rows), np.concatenate(rhs)


def random_feasible_trajectory(cfg: ExcitationConfig, rng: np.random.Generator) -> FourierTrajectory:
    """Uniform coefficients in [-1, 1], projected onto the rest conditions and scaled into bounds."""
    prob = _Problem(cfg)
    return prob.trajectory(_random_start(prob, rng))


def _random_start(prob: _Problem, rng: np.random.Generator) -> np.ndarray:
    delta = rng.uniform(-1.0, 1.0, size=(6, prob.basis.shape[0]))
    z = (delta @ prob.basis).reshape(-1)
    return prob.scale_into_bounds(z, margin=0.95)


def evaluate_criterion(traj: FourierTrajectory, cfg: ExcitationConfig) -> float:
    """Criterion ``cfg.criterion`` of ``traj`` sampled on the config's collocation grid."""
    X, Xd, Xdd = traj.eval(sample_times(cfg.T_f, cfg.N))
    return float(CRITERIA[cfg.criterion](regressor_from_pose(X, Xd, Xdd), cfg.sigma))


@dataclass
class OptimizationResult:
    trajectory: FourierTrajectory
    value: float
    start_index: int
    start_values: list


def optimize_trajectory(cfg: ExcitationConfig, seed: int = 0, return_details: bool = False):
    """Multistart search for the best feasible excitation trajectory.

    Every start draws coefficients uniformly in [-1, 1], projects them onto
    the rest-condition null space and shrinks them into the box limits; SLSQP
    then minimises the criterion subject to the linear box inequalities.
    Ties between starts go to the lowest start index.

    Raises
    ------
    InfeasibleConfigError
        If no start yields a feasible trajectory with full-rank regressor.
    """
    prob = _Problem(cfg)
    C, h = prob.constraints()
    use_log = cfg.criterion == "J1"
    big = 1e6

    def f(z):
        v = prob.objective(z[None])[0]
        if not np.isfinite(v):
            return big
        return float(np.log(v)) if use_log else float(v)

    def grad(z):
        eps = 1e-6 * max(1.0, float(np.max(np.abs(z))))
        Z = np.vstack([z, z + eps * np.eye(z.size)])
        v = prob.objective(Z)
        if not np.all(np.isfinite(v)):
            return np.zeros_like(z)
        if use_log:
            v = np.log(v)
        return (v[1:] - v[0]) / eps

    seeds = np.random.SeedSequence(seed).spawn(cfg.multistart)
    best = None
    values = []
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        z0 = _random_start(prob, rng)
        if not np.isfinite(prob.objective(z0[None])[0]):
            values.append(np.inf)
            continue
        res = minimize(
            f, z0, jac=grad, method="SLSQP",
            constraints=[{"type": "ineq", "fun": lambda z: h - C @ z, "jac": lambda z: -C}],
            options={"maxiter": cfg.maxiter, "ftol": 1e-9},
        )
        z = res.x
        if prob.violation(z) > 0:
            z = prob.scale_into_bounds(z)
        value = float(prob.objective(z[None])[0])
        if not np.isfinite(value) or prob.violation(z) > 1e-6:
            value = np.inf
        values.append(value)
        log.debug("start %d: %s=%.6g (%s)", i, cfg.criterion, value, res.message)
        if np.isfinite(value) and (best is None or value < best[1]):
            best = (z, value, i)
    if best is None:
        raise InfeasibleConfigError("no feasible excitation trajectory with a full-rank regressor was found")
    traj = prob.trajectory(best[0])
    if return_details:
        return OptimizationResult(traj, best[1], best[2], values)
    return traj
