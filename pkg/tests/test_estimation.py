import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from freeflyer_id.control import MeasurementLog, ideal_log
from freeflyer_id.dynamics import InertialParams, cobot_params, grasped_params
from freeflyer_id.errors import RankDeficiencyError
from freeflyer_id.estimation import (PARAM_NAMES, EstimationResult, estimate_from_log, parameter_errors,
                                     solve_lsq)
from freeflyer_id.regressor import regressor_row, stack
from freeflyer_id.trajectory import FourierTrajectory, rest_nullspace


def rest_to_rest(seed, scale=0.15):
    w = 2 * np.pi / 10
    B = rest_nullspace(w, 3)
    rng = np.random.default_rng(seed)
    return FourierTrajectory.from_delta(w, 3, np.concatenate([scale * B @ rng.uniform(-1, 1, 4) for _ in range(6)]))


def synthetic_W(rng, N=100):
    R = Rotation.random(N, random_state=rng).as_matrix()
    w, alpha, a_c = rng.normal(size=(3, N, 3))
    return regressor_row(R, w, alpha, a_c).reshape(-1, 10)


def test_exact_recovery_synthetic():
    rng = np.random.default_rng(0)
    W = synthetic_W(rng)
    pi = grasped_params().vector
    est = solve_lsq(stack(W.reshape(-1, 6, 10), (W @ pi).reshape(-1, 6)))
    assert np.all(np.abs(est - pi) <= 1e-8 * np.abs(pi))


def test_no_rotation_is_rank_deficient():
    N = 50
    rng = np.random.default_rng(1)
    G = regressor_row(np.tile(np.eye(3), (N, 1, 1)), np.zeros((N, 3)), np.zeros((N, 3)), rng.normal(size=(N, 3)))
    with pytest.raises(RankDeficiencyError) as exc:
        solve_lsq(stack(G, np.zeros((N, 6))))
    assert exc.value.singular_values.size == 10


def test_stationary_log_raises():
    n = 2000
    log_ = MeasurementLog(np.arange(n) / 100, np.zeros((n, 6)), np.zeros((n, 6)), np.zeros(n),
                          {"T_f": 10.0, "f_s": 100.0, "C": 2})
    with pytest.raises(RankDeficiencyError):
        estimate_from_log(log_, n_range=(3, 4))


def test_covariance_monte_carlo():
    rng = np.random.default_rng(2)
    W = synthetic_W(rng, N=60)
    pi = grasped_params().vector
    sigma = 0.05
    cov = sigma ** 2 * np.linalg.inv(W.T @ W)
    # Mahalanobis distance of each estimate follows chi^2 with 10 dof
    d2 = []
    for _ in range(100):
        est = solve_lsq(stack(W.reshape(-1, 6, 10), (W @ pi + sigma * rng.normal(size=W.shape[0])).reshape(-1, 6)))
        e = est - pi
        d2.append(e @ np.linalg.solve(cov, e))
    d2 = np.array(d2)
    assert abs(d2.mean() - 10) < 3 * np.sqrt(2 * 10 / 100)
    assert np.mean(d2 > 23.2) < 0.05  # chi^2_10 99th percentile


def test_parameter_errors_zero_for_truth():
    p = grasped_params()
    e = parameter_errors(p.vector, p)
    assert e.mass_error == 0 and e.inertia_rmse == 0 and e.offset_error_norm == 0 and e.combined == 0


def test_parameter_errors_values():
    p = grasped_params()
    v = p.vector.copy()
    v[0] *= 1.1
    e = parameter_errors(v, p)
    assert e.mass_error == pytest.approx(0.1 * p.mass)
    assert e.mass_rel == pytest.approx(0.1)


def test_ideal_log_recovers_parameters():
    p = grasped_params("load2")
    res = estimate_from_log(ideal_log(p, rest_to_rest(3), C=2), n_range=(3, 6), truth=p)
    assert res.n_star == 3
    assert np.allclose(res.pi_hat, p.vector, rtol=1e-6, atol=0)
    assert res.physical == {"mass_positive": True, "J_s_positive_definite": True}
    assert [r["n"] for r in res.sweep] == [3, 4, 5, 6]


def test_time_shift_invariance():
    p = grasped_params()
    log_ = ideal_log(p, rest_to_rest(4), C=2)
    shift = 137
    rolled = MeasurementLog(log_.t, np.roll(log_.pose, shift, 0), np.roll(log_.u, shift, 0), log_.sat, log_.meta)
    a = estimate_from_log(log_, n_range=(3, 5))
    b = estimate_from_log(rolled, n_range=(3, 5))
    assert np.allclose(a.pi_hat, b.pi_hat, rtol=1e-9, atol=1e-12)


def test_result_json_round_trip(tmp_path):
    p = cobot_params()
    res = estimate_from_log(ideal_log(p, rest_to_rest(5), C=1), n_range=(3, 4), truth=p)
    res.save(tmp_path / "r.json")
    back = EstimationResult.load(tmp_path / "r.json")
    assert np.array_equal(back.pi_hat, res.pi_hat) and back.n_star == res.n_star
    assert back.errors == res.errors and back.sweep == res.sweep
    assert isinstance(back.params, InertialParams)
    assert len(PARAM_NAMES) == 10
