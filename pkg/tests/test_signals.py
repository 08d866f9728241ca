import numpy as np
import pytest

from freeflyer_id.control import ControllerConfig, MeasurementLog, track_trajectory
from freeflyer_id.dynamics import grasped_params
from freeflyer_id.errors import InvalidInputError, InvalidLogError
from freeflyer_id.signals import (PeriodicSignal, cycle_average, cycle_average_array, fft_filter, fit_fourier,
                                  harmonic_energy, held_lowpass, period_samples, reconstruct_kinematics)
from freeflyer_id.trajectory import FourierTrajectory, rest_nullspace

W_F = 2 * np.pi / 10


def random_traj(rng, n=3, scale=0.2):
    return FourierTrajectory(W_F, rng.normal(size=6) * 0.1, scale * rng.normal(size=(6, n)),
                             scale * rng.normal(size=(6, n)))


def test_cycle_average_identity_and_length():
    x = np.random.default_rng(0).normal(size=(1000, 6))
    assert np.array_equal(cycle_average_array(x, 1), x)
    assert cycle_average_array(np.tile(x, (10, 1)), 10).shape == (1000, 6)
    assert period_samples(10.0, 100.0) == 1000


def test_cycle_average_rejects_ragged():
    with pytest.raises(InvalidLogError):
        cycle_average_array(np.zeros((1001, 6)), 10)
    with pytest.raises(InvalidLogError):
        period_samples(10.0, 33.33)


def test_cycle_average_noise_variance():
    rng = np.random.default_rng(1)
    t = np.arange(100) / 10
    clean = np.sin(W_F * t)
    sigma, C = 0.1, 10
    resid = [cycle_average_array(np.tile(clean, C) + sigma * rng.normal(size=100 * C), C) - clean
             for _ in range(100)]
    assert np.var(resid) == pytest.approx(sigma ** 2 / C, rel=0.2)


def test_cycle_average_unwraps_angles():
    t = np.arange(2000) / 100
    pose = np.zeros((2000, 6))
    pose[:, 5] = np.angle(np.exp(1j * (np.pi - 0.05 + 0.1 * np.sin(W_F * t))))
    log_ = MeasurementLog(t, pose, np.zeros((2000, 6)), np.zeros(2000), {"T_f": 10.0, "f_s": 100.0, "C": 2})
    sig = cycle_average(log_)
    assert np.ptp(sig.samples[:, 5]) < 0.21


def test_fft_filter_examples():
    t = np.arange(1000) / 100
    sig = PeriodicSignal(np.sin(W_F * t) + np.sin(20 * W_F * t), 100.0, W_F)
    out = fft_filter(sig, 3)
    assert np.sqrt(np.mean((out.samples[:, 0] - np.sin(W_F * t)) ** 2)) < 1e-10
    assert np.array_equal(fft_filter(sig, 499).samples, sig.samples)
    const = PeriodicSignal(np.full(1000, 2.5), 100.0, W_F)
    assert np.allclose(fft_filter(const, 2).samples, 2.5, rtol=0, atol=1e-14)


def test_fit_fourier_exact_recovery():
    rng = np.random.default_rng(2)
    traj = random_traj(rng)
    t = np.arange(1000) / 100
    X, _, _ = traj.eval(t)
    fit = fit_fourier(PeriodicSignal(X, 100.0, W_F), 3)
    assert np.allclose(fit.delta, traj.delta, rtol=0, atol=1e-9)
    assert not fit_fourier(PeriodicSignal(np.zeros((1000, 6)), 100.0, W_F), 3).delta.any()


def test_fit_fourier_noise_level():
    rng = np.random.default_rng(3)
    traj = random_traj(rng)
    t = np.arange(1000) / 100
    X, _, _ = traj.eval(t)
    sigma = 1e-3
    fit = fit_fourier(PeriodicSignal(X + sigma * rng.normal(size=X.shape), 100.0, W_F), 3)
    # compare position-level (cos, sin) coefficients
    k = W_F * np.arange(1, 4)
    err = np.concatenate([(fit.a - traj.a) / k, (fit.b - traj.b) / k], axis=1)
    assert np.sqrt(np.mean(err ** 2)) < 3 * sigma * np.sqrt(2 / 1000)


def test_fit_fourier_rejects_bad_order():
    with pytest.raises(InvalidInputError):
        fit_fourier(PeriodicSignal(np.zeros((100, 6)), 10.0, W_F), 50)


def test_reconstruct_single_harmonic_and_zero():
    a = np.zeros((6, 1))
    a[0, 0] = 1.0
    kin = reconstruct_kinematics(FourierTrajectory(W_F, np.zeros(6), a, np.zeros((6, 1))), [0.0, 2.5])
    assert np.allclose(kin.Xd[:, 0], [1.0, np.cos(W_F * 2.5)]) and np.allclose(kin.Xdd[:, 0], [0, -W_F])
    zero = reconstruct_kinematics(FourierTrajectory.zeros(W_F, 3), np.linspace(0, 10, 5))
    assert not zero.a_c.any() and not zero.alpha.any() and not zero.omega.any()


def test_reconstructed_acceleration_matches_finite_difference():
    B = rest_nullspace(W_F, 3)
    rng = np.random.default_rng(4)
    traj = FourierTrajectory.from_delta(W_F, 3, np.concatenate([0.15 * B @ rng.uniform(-1, 1, 4) for _ in range(6)]))
    p = grasped_params()
    log_ = track_trajectory(ControllerConfig(p, kind="pd"), p, traj, 1)
    kin = reconstruct_kinematics(fit_fourier(cycle_average(log_), 3), log_.t)
    pos = log_.pose[:, :3]
    h = 1 / log_.f_s
    fd = (np.roll(pos, -1, 0) - 2 * pos + np.roll(pos, 1, 0)) / h ** 2
    assert np.sqrt(np.mean((fd - kin.a_c) ** 2)) < 1e-3


def test_harmonic_energy_split():
    t = np.arange(1000) / 100
    sig = PeriodicSignal(np.sin(W_F * t) + 0.1 * np.sin(5 * W_F * t), 100.0, W_F)
    above, total = harmonic_energy(sig, 3)
    assert above / total == pytest.approx(0.01 / 1.01, rel=1e-9)


def test_held_lowpass_matches_fine_grid_staircase():
    N, hold, band = 1000, 2, 50
    rng = np.random.default_rng(5)
    values = rng.normal(size=N // hold)
    held = np.repeat(values, hold)[:, None]
    # the staircase resolved 64 points per hold interval (fine sample i sits at the
    # middle of its sub-interval), low-passed by brute force
    fine = np.repeat(values, 64)
    spec = np.fft.rfft(fine)[: band + 1]
    k = np.arange(band + 1)
    t = np.arange(N) / N - 0.5 / fine.size
    ref = (spec[0].real + 2 * np.real(spec[1:, None] * np.exp(2j * np.pi * k[1:, None] * t)).sum(0)) / fine.size
    # the fine-grid box approximates the continuous one to O(1/64^2)
    assert np.allclose(held_lowpass(held, hold, band)[:, 0], ref, rtol=0, atol=1e-5)


def test_held_lowpass_validation():
    with pytest.raises(InvalidInputError):
        held_lowpass(np.zeros((1000, 1)), 3, 10)
    with pytest.raises(InvalidInputError):
        held_lowpass(np.zeros((1000, 1)), 2, 250)
