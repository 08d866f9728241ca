"""Periodic signal processing for logged poses.

Measured cycles are phase-averaged, band-limited to the first ``n`` harmonics
of the excitation frequency and fitted with a truncated Fourier series whose
derivatives are then evaluated analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import MeasurementLog
from .errors import InvalidInputError, InvalidLogError
from .regressor import kinematics_from_pose
from .trajectory import FourierTrajectory


@dataclass
class PeriodicSignal:
    """One period of samples, shape ``(N_s, n_axes)``, starting at ``t = 0``."""

    samples: np.ndarray
    f_s: float
    omega_f: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]

    @property
    def N_s(self) -> int:
        return self.samples.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.N_s) / self.f_s


def period_samples(T_f: float, f_s: float) -> int:
    N_s = T_f * f_s
    if abs(N_s - round(N_s)) > 1e-6:
        raise InvalidLogError(f"T_f * f_s = {N_s} is not an integer")
    return int(round(N_s))


def cycle_average_array(data: np.ndarray, C: int) -> np.ndarray:
    """Mean over ``C`` consecutive equal-length cycles of ``data`` (rows are samples)."""
    data = np.asarray(data, dtype=float)
    if C < 1 or data.shape[0] % C:
        raise InvalidLogError(f"{data.shape[0]} samples cannot be split into {C} cycles")
    return data.reshape((C, data.shape[0] // C) + data.shape[1:]).mean(axis=0)


def cycle_average(log: MeasurementLog, C: int | None = None) -> PeriodicSignal:
    """Phase-averaged pose over ``C`` cycles; Euler angles are unwrapped first."""
    C = log.cycles if C is None else C
    N_s = period_samples(log.T_f, log.f_s)
    if log.pose.shape[0] != C * N_s:
        raise InvalidLogError(f"log has {log.pose.shape[0]} samples, expected {C}x{N_s}")
    pose = log.pose.copy()
    pose[:, 3:] = np.unwrap(pose[:, 3:], axis=0)
    return PeriodicSignal(cycle_average_array(pose, C), log.f_s, 2 * np.pi / log.T_f)


def fft_filter(sig: PeriodicSignal, n: int) -> PeriodicSignal:
    """Keep the DC bin and harmonics 1..n of the period; zero the rest.

    For ``n >= N_s/2 - 1`` every bin is kept (the filter is all-pass).
    """
    N = sig.N_s
    if n >= N // 2 - 1:
        return PeriodicSignal(sig.samples.copy(), sig.f_s, sig.omega_f)
    if n < 0:
        raise InvalidInputError("n must be non-negative")
    spec = np.fft.rfft(sig.samples, axis=0)
    spec[n + 1:] = 0.0
    return PeriodicSignal(np.fft.irfft(spec, n=N, axis=0), sig.f_s, sig.omega_f)


def held_lowpass(samples: np.ndarray, hold: int, band: int) -> np.ndarray:
    """Band-limited continuous-time content of a periodic zero-order-hold signal.

    ``samples`` covers one period, with each held value repeated ``hold``
    times starting at sample 0.  The spectrum of the held staircase is the
    spectrum of the held values times the box response of one hold interval
    (a sinc magnitude and a half-interval delay).  Harmonics above ``band``
    are dropped and the result is evaluated back on the sample grid.
    """
    samples = np.asarray(samples, dtype=float)
    N = samples.shape[0]
    if hold < 1 or N % hold:
        raise InvalidInputError(f"hold of {hold} samples does not divide {N}")
    held = samples[::hold]
    N_c = held.shape[0]
    if not 0 <= band < N_c / 2:
        raise InvalidInputError(f"band must be below {N_c / 2}, got {band}")
    k = np.arange(band + 1)
    box = np.sinc(k / N_c) * np.exp(-1j * np.pi * k / N_c)
    spec = np.fft.rfft(held, axis=0)[: band + 1] * box[:, None] * (N / N_c)
    return np.fft.irfft(spec, n=N, axis=0)


def fit_fourier(sig: PeriodicSignal, n: int) -> FourierTrajectory:
    """Least-squares truncated Fourier fit via the FFT, in velocity-level coefficients.

    ``sig`` must have six axes (x, y, z, phi, theta, psi).
    """
    N = sig.N_s
    if not 0 < n < N / 2:
        raise InvalidInputError(f"need 0 < n < N_s/2, got n={n}, N_s={N}")
    if sig.samples.shape[1] != 6:
        raise InvalidInputError("fit_fourier expects six pose axes")
    spec = np.fft.rfft(sig.samples, axis=0)
    k = np.arange(1, n + 1)
    wk = sig.omega_f * k
    cos_c = 2.0 * spec[1:n + 1].real / N  # (n, 6)
    sin_c = -2.0 * spec[1:n + 1].imag / N
    a0 = spec[0].real / N
    a = (sin_c * wk[:, None]).T
    b = (-cos_c * wk[:, None]).T
    return FourierTrajectory(sig.omega_f, a0, a, b)


@dataclass
class Kinematics:
    """Analytic pose derivatives and the regressor inputs derived from them."""

    t: np.ndarray
    X: np.ndarray
    Xd: np.ndarray
    Xdd: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    a_c: np.ndarray
    v_c: np.ndarray


def reconstruct_kinematics(coeffs: FourierTrajectory, t) -> Kinematics:
    X, Xd, Xdd = coeffs.eval(np.asarray(t, dtype=float))
    R, omega, alpha, a_c, v_c = kinematics_from_pose(X, Xd, Xdd)
    return Kinematics(np.asarray(t, dtype=float), X, Xd, Xdd, R, omega, alpha, a_c, v_c)


def harmonic_energy(sig: PeriodicSignal, above: int) -> tuple[float, float]:
    """Spectral energy above harmonic ``above`` and the total AC energy (DC excluded)."""
    spec = np.abs(np.fft.rfft(sig.samples - sig.samples.mean(axis=0), axis=0)) ** 2
    return float(spec[above + 1:].sum()), float(spec[1:].sum())
