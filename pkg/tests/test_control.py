import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from freeflyer_id.control import (ControllerConfig, MeasurementLog, NoiseModel, ReferenceWindow, _tracking_errors,
                                  attitude_error, control_step, ideal_log, track_trajectory)
from freeflyer_id.dynamics import RigidBodyState, cobot_params, grasped_params
from freeflyer_id.errors import InvalidInputError
from freeflyer_id.signals import cycle_average, harmonic_energy
from freeflyer_id.trajectory import FourierTrajectory, rest_nullspace


def smooth_trajectory(T_f=10.0, scale=(0.15, 0.15, 0.15, 0.1, 0.1, 0.1), seed=0):
    """Rest-to-rest 3-harmonic trajectory with modest amplitudes."""
    w, n = 2 * np.pi / T_f, 3
    B = rest_nullspace(w, n)
    rng = np.random.default_rng(seed)
    delta = np.concatenate([s * B @ rng.uniform(-1, 1, B.shape[1]) for s in scale])
    return FourierTrajectory.from_delta(w, n, delta)


def test_attitude_error_zero():
    q = Rotation.random(random_state=1).as_quat(scalar_first=True)
    assert np.allclose(attitude_error(q, q), 0, atol=1e-15)


def test_attitude_error_small_z_rotation():
    theta = 0.01
    q = Rotation.from_rotvec([0, 0, theta]).as_quat(scalar_first=True)
    assert np.allclose(attitude_error([1.0, 0, 0, 0], q), [0, 0, np.sin(theta)], rtol=0, atol=1e-15)


def test_attitude_error_antisymmetric():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q1, q2 = Rotation.random(2, random_state=rng).as_quat(scalar_first=True)
        assert np.allclose(attitude_error(q1, q2), -attitude_error(q2, q1), rtol=0, atol=1e-14)


def test_tracking_error_jacobian_matches_finite_difference():
    rng = np.random.default_rng(3)
    R0 = Rotation.random(random_state=rng)
    x = np.concatenate([rng.normal(size=6), R0.as_quat(scalar_first=True), rng.normal(size=3)])[None]
    X = np.concatenate([rng.normal(size=3), [0.2, -0.3, 0.4]])
    ref = ReferenceWindow.from_pose(X, rng.normal(size=6), rng.normal(size=6))
    e0, C = _tracking_errors(x, ref)
    h = 1e-6
    num = np.zeros((12, 12))
    for j in range(12):
        xp = x.copy()
        if 6 <= j < 9:
            d = np.zeros(3)
            d[j - 6] = h
            xp[0, 6:10] = (R0 * Rotation.from_rotvec(d)).as_quat(scalar_first=True)
        else:
            xp[0, j if j < 6 else j + 1] += h
        num[:, j] = (_tracking_errors(xp, ref)[0] - e0)[0] / h
    assert np.allclose(num, C[0], rtol=0, atol=1e-5)


@pytest.mark.parametrize("kind", ["mpc", "pd"])
def test_rest_fixed_point(kind):
    cfg = ControllerConfig(grasped_params(), kind=kind)
    u = control_step(cfg, RigidBodyState(), ReferenceWindow.rest(cfg.steps + 1))
    assert np.linalg.norm(u) < 1e-6


def test_controller_config_validation():
    with pytest.raises(InvalidInputError):
        ControllerConfig(cobot_params(), u_min=0.1)
    with pytest.raises(InvalidInputError):
        ControllerConfig(cobot_params(), kind="lqr")
    with pytest.raises(InvalidInputError):
        ControllerConfig(cobot_params(), horizon=0.01, dt_c=0.02)


def test_commands_respect_bounds():
    traj = smooth_trajectory()
    cfg = ControllerConfig(cobot_params(), u_min=-0.3, u_max=0.3, kind="pd")
    log_ = track_trajectory(cfg, grasped_params(), traj, 1, warmup_cycles=0)
    assert np.all(np.abs(log_.u) <= 0.3 + 1e-12)
    assert log_.saturation_fraction > 0 and log_.sat.any()


@pytest.mark.parametrize("kind", ["mpc", "pd"])
def test_nominal_tracking_is_accurate_and_band_limited(kind):
    traj = smooth_trajectory()
    p = grasped_params()
    cfg = ControllerConfig(p, kind=kind, u_min=-10, u_max=10)
    log_ = track_trajectory(cfg, p, traj, 1)
    X, _, _ = traj.eval(log_.t)
    rms = np.sqrt(((log_.pose - X) ** 2).mean(axis=0))
    assert np.all(rms < 0.01 * np.ptp(X, axis=0) / 2)
    above, total = harmonic_energy(cycle_average(log_), 3)
    assert above < 1e-6 * total
    assert log_.saturation_fraction == 0.0


def test_stale_nominal_adds_harmonics():
    traj = smooth_trajectory()
    p = grasped_params()
    good = track_trajectory(ControllerConfig(p, kind="pd"), p, traj, 1)
    stale = track_trajectory(ControllerConfig(cobot_params(), kind="pd", u_min=-0.4, u_max=0.4), p, traj, 1)
    e_good, _ = harmonic_energy(cycle_average(good), 3)
    e_stale, _ = harmonic_energy(cycle_average(stale), 3)
    assert e_stale > 10 * e_good


def test_log_duration_and_metadata():
    traj = smooth_trajectory(T_f=10.0)
    log_ = ideal_log(grasped_params(), traj, C=10)
    assert log_.duration == pytest.approx(100.0)
    assert log_.pose.shape == (10_000, 6) and log_.cycles == 10


def test_log_csv_round_trip(tmp_path):
    traj = smooth_trajectory()
    log_ = ideal_log(grasped_params(), traj, C=2).with_noise(NoiseModel(), np.random.default_rng(0))
    log_.to_csv(tmp_path / "log.csv")
    back = MeasurementLog.from_csv(tmp_path / "log.csv")
    assert np.array_equal(back.pose, log_.pose) and np.array_equal(back.u, log_.u)
    assert np.array_equal(back.t, log_.t) and back.meta == log_.meta
    assert back.first_cycles(1).pose.shape == (1000, 6)


def test_log_csv_rejects_foreign_columns(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError):
        MeasurementLog.from_csv(tmp_path / "bad.csv")


def test_noise_is_seeded():
    traj = smooth_trajectory()
    cfg = ControllerConfig(grasped_params(), kind="pd")
    a = track_trajectory(cfg, grasped_params(), traj, 1, noise=NoiseModel(), seed=5)
    b = track_trajectory(cfg, grasped_params(), traj, 1, noise=NoiseModel(), seed=5)
    c = track_trajectory(cfg, grasped_params(), traj, 1, seed=5)
    assert np.array_equal(a.pose, b.pose) and not np.array_equal(a.pose, c.pose)
    assert np.std(a.pose[:, 0] - c.pose[:, 0]) == pytest.approx(0.002, rel=0.2)


def test_hold_recorded_when_integral():
    traj = smooth_trajectory()
    log_ = track_trajectory(ControllerConfig(grasped_params(), kind="pd"), grasped_params(), traj, 1)
    assert log_.meta["hold_samples"] == 2 and "hold_samples" not in ideal_log(grasped_params(), traj, 1).meta


def test_rejects_bad_cycle_count():
    with pytest.raises(InvalidInputError):
        track_trajectory(ControllerConfig(cobot_params()), grasped_params(), smooth_trajectory(), 0)
