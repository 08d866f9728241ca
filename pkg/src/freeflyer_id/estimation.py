"""Least-squares identification of the ten inertial parameters from a log."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import MeasurementLog
from .dynamics import ActuationMatrix, InertialParams, default_actuation_matrix
from .errors import RankDeficiencyError
from .regressor import StackedSystem, regressor_row, stack
from .signals import (PeriodicSignal, cycle_average, cycle_average_array, fft_filter, fit_fourier, held_lowpass,
                      reconstruct_kinematics)

log = logging.getLogger(__name__)

PARAM_NAMES = ["m", "mpx", "mpy", "mpz", "Jxx", "Jxy", "Jxz", "Jyy", "Jyz", "Jzz"]


def solve_lsq(system: StackedSystem, rcond: float = 1e-10) -> np.ndarray:
    """Minimise ``||W pi - b||`` with a QR factorisation.

    Raises
    ------
    RankDeficiencyError
        If ``W`` has fewer than 10 singular values above ``rcond * s_max``.
    """
    W, b = system.W, system.b
    s = np.linalg.svd(W, compute_uv=False)
    if W.shape[0] < 10 or s[0] == 0 or s[-1] <= rcond * s[0]:
        smallest = ", ".join(f"{v:.3g}" for v in s[-3:])
        raise RankDeficiencyError(f"regressor is rank deficient; smallest singular values: {smallest}", s)
    Q, R = np.linalg.qr(W)
    return np.linalg.solve(R, Q.T @ b)


WRENCH_BAND = 50


def averaged_data(log_: MeasurementLog, actuation: ActuationMatrix | None = None,
                  wrench_band: int = WRENCH_BAND):
    """Cycle-averaged pose signal and the matching per-bin body wrenches ``(N_s, 6)``.

    When the log records a command hold (``meta["hold_samples"]``) the wrench
    is replaced by the low-frequency content of the held staircase, which is
    what the smooth pose fit actually responds to.  Instantaneous logs are
    used as they are.
    """
    A = actuation or default_actuation_matrix()
    pose_sig = cycle_average(log_)
    wrenches = cycle_average_array(log_.u, log_.cycles) @ A.matrix.T
    hold = log_.meta.get("hold_samples")
    if hold:
        band = min(wrench_band, (pose_sig.N_s // int(hold) - 1) // 2)
        wrenches = held_lowpass(wrenches, int(hold), band)
    return pose_sig, wrenches


def estimate_for_harmonics(pose_sig: PeriodicSignal, wrenches: np.ndarray, n: int):
    """Filter, fit and identify with ``n`` harmonics; returns ``(pi_hat, kinematics, system)``."""
    coeffs = fit_fourier(fft_filter(pose_sig, n), n)
    kin = reconstruct_kinematics(coeffs, pose_sig.t)
    system = stack(regressor_row(kin.R, kin.omega, kin.alpha, kin.a_c), wrenches)
    return solve_lsq(system), kin, system


@dataclass
class ParameterErrors:
    mass_error: float
    inertia_rmse: float
    offset_error_norm: float
    mass_rel: float
    inertia_rel: float
    offset_rel: float
    param_rel: list

    @property
    def combined(self) -> float:
        """Mean of the three relative errors; one scalar per estimate."""
        return (self.mass_rel + self.inertia_rel + self.offset_rel) / 3.0


def parameter_errors(pi_hat, truth: InertialParams) -> ParameterErrors:
    """Mass error (kg), RMS error of the six inertia components about the body
    origin (kg m^2), and COM-offset error norm (m), with relative versions."""
    est = InertialParams.from_vector(pi_hat)
    d_mass = abs(est.mass - truth.mass)
    d_J = est.inertia_c - truth.inertia_c
    rmse = float(np.sqrt(np.mean(d_J ** 2)))
    d_off = float(np.linalg.norm(est.p_off - truth.p_off))
    J_norm = np.linalg.norm(truth.J_c)
    p_norm = np.linalg.norm(truth.p_off)
    tv = truth.vector
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(np.asarray(pi_hat) - tv) / np.abs(tv)
    return ParameterErrors(
        mass_error=float(d_mass),
        inertia_rmse=rmse,
        offset_error_norm=d_off,
        mass_rel=float(d_mass / truth.mass),
        inertia_rel=float(rmse / J_norm),
        offset_rel=float(d_off / p_norm) if p_norm > 0 else float(d_off),
        param_rel=rel.tolist(),
    )


@dataclass
class EstimationResult:
    pi_hat: np.ndarray
    n_star: int
    residual_energy: float
    cond_W: float
    lsq_residual_norm: float
    physical: dict
    errors: ParameterErrors | None = None
    sweep: list = field(default_factory=list)

    @property
    def params(self) -> InertialParams:
        return InertialParams.from_vector(self.pi_hat)

    def to_dict(self) -> dict:
        d = {
            "pi_hat": dict(zip(PARAM_NAMES, np.asarray(self.pi_hat).tolist())),
            "n_star": self.n_star,
            "residual_energy": self.residual_energy,
            "cond_W": self.cond_W,
            "lsq_residual_norm": self.lsq_residual_norm,
            "physical": self.physical,
            "sweep": self.sweep,
        }
        if self.errors is not None:
            d["errors"] = asdict(self.errors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        errors = ParameterErrors(**d["errors"]) if "errors" in d else None
        return cls(
            pi_hat=np.array([d["pi_hat"][k] for k in PARAM_NAMES]),
            n_star=int(d["n_star"]),
            residual_energy=float(d["residual_energy"]),
            cond_W=float(d["cond_W"]),
            lsq_residual_norm=float(d["lsq_residual_norm"]),
            physical=dict(d["physical"]),
            errors=errors,
            sweep=list(d.get("sweep", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "EstimationResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_from_log(log_: MeasurementLog, n_range=(3, 20), actuation: ActuationMatrix | None = None,
                      truth: InertialParams | None = None, selection=None) -> EstimationResult:
    """Full chain: average, sweep harmonics, keep the estimate at the selected ``n``.

    When ``truth`` is given, every sweep row also carries the parameter
    errors so the selected ``n`` can be compared with the best one.
    """
    from .energy import select_harmonics

    sel = selection or select_harmonics(averaged_data(log_, actuation), n_range)
    n = sel.n_star
    pi_hat = sel.estimates[n]
    system = sel.systems[n]
    params = InertialParams.from_vector(pi_hat)
    J_s = params.J_s
    physical = {
        "mass_positive": bool(params.mass > 0),
        "J_s_positive_definite": bool(np.all(np.linalg.eigvalsh(0.5 * (J_s + J_s.T)) > 0)),
    }
    sweep = []
    for k in sel.n_values:
        row = {"n": k, "residual": sel.residuals[k]}
        if truth is not None:
            e = parameter_errors(sel.estimates[k], truth)
            row.update(mass_error=e.mass_error, inertia_rmse=e.inertia_rmse,
                       offset_error_norm=e.offset_error_norm, combined=e.combined)
        sweep.append(row)
    return EstimationResult(
        pi_hat=pi_hat,
        n_star=n,
        residual_energy=sel.residuals[n],
        cond_W=system.cond,
        lsq_residual_norm=float(np.linalg.norm(system.W @ pi_hat - system.b)),
        physical=physical,
        errors=parameter_errors(pi_hat, truth) if truth is not None else None,
        sweep=sweep,
    )
