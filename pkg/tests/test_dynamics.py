import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from freeflyer_id.dynamics import (
    ActuationMatrix,
    InertialParams,
    RigidBodyState,
    Wrench,
    cobot_params,
    default_actuation_matrix,
    forward_dynamics,
    grasped_params,
    integrate_step,
    inverse_dynamics,
    model_arrays,
    parallel_axis,
    parallel_axis_inv,
    rk4_hold,
    saturate,
    wrench_from_actuation,
)
from freeflyer_id.energy import kinetic_energy
from freeflyer_id.errors import InconsistentParametersError, InvalidInputError, SingularInertiaError

COBOT_J = np.diag([0.0453, 0.0417, 0.0519])


def random_state(rng):
    q = Rotation.random(random_state=rng).as_quat(scalar_first=True)
    return RigidBodyState(rng.normal(size=3), rng.normal(size=3), q, rng.normal(size=3))


def test_identity_mixing():
    A = ActuationMatrix(np.eye(6))
    w = wrench_from_actuation(A, [1, 0, 0, 0, 0, 0])
    assert np.array_equal(w.F, [1, 0, 0]) and np.array_equal(w.M, [0, 0, 0])
    assert np.array_equal(wrench_from_actuation(A, np.zeros(6)).vector, np.zeros(6))


def test_default_mixing_matches_hand_sum():
    A = default_actuation_matrix()
    w = wrench_from_actuation(A, np.ones(6))
    hand = [sum(A.matrix[i, j] * 1.0 for j in range(6)) for i in range(6)]
    assert np.allclose(w.vector, hand, rtol=0, atol=1e-14)


def test_default_mixing_capacity():
    # every pure unit-axis wrench of 5 N / 1 N m is reachable with |u| <= 1
    A = default_actuation_matrix()
    targets = np.diag([5.0, 5, 5, 1, 1, 1])
    u = A.inverse @ targets
    assert np.abs(u).max() <= 1 + 1e-12
    assert A.cond < 10


def test_mixing_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        wrench_from_actuation(ActuationMatrix(np.eye(6)), [np.nan, 0, 0, 0, 0, 0])
    with pytest.raises(InvalidInputError):
        ActuationMatrix(np.zeros((6, 6)))
    with pytest.raises(InvalidInputError):
        ActuationMatrix(np.eye(5))


def test_saturate():
    u, flag = saturate([2.0, -3.0, 0.1, 0, 0, 0], -1.0, 1.0)
    assert np.array_equal(u, [1, -1, 0.1, 0, 0, 0]) and flag
    u, flag = saturate(np.full(6, 0.5), -1.0, 1.0)
    assert not flag


def test_forward_f_equals_ma():
    m = 6.047
    params = InertialParams.from_com(m, np.zeros(3), COBOT_J)
    a_c, alpha = forward_dynamics(params, RigidBodyState(), Wrench(np.array([m, 0, 0]), np.zeros(3)))
    assert np.allclose(a_c, [1, 0, 0]) and np.allclose(alpha, 0)


def test_forward_m_equals_j_alpha():
    params = InertialParams.from_com(6.047, np.zeros(3), COBOT_J)
    a_c, alpha = forward_dynamics(params, RigidBodyState(), Wrench(np.zeros(3), np.array([0.0453, 0, 0])))
    assert np.allclose(alpha, [1, 0, 0]) and np.allclose(a_c, 0)


def test_round_trip_reference_parameters():
    rng = np.random.default_rng(11)
    params = InertialParams.from_com(6.047, [0.05, -0.02, 0.03], COBOT_J)
    for _ in range(50):
        state = random_state(rng)
        w = Wrench.from_vector(rng.normal(size=6))
        a_c, alpha = forward_dynamics(params, state, w)
        back = inverse_dynamics(params, state, a_c, alpha)
        assert np.allclose(back.vector, w.vector, rtol=0, atol=1e-10)


def test_zero_acceleration_zero_wrench():
    w = inverse_dynamics(grasped_params(), RigidBodyState(), np.zeros(3), np.zeros(3))
    assert np.array_equal(w.vector, np.zeros(6))


def test_decoupled_when_no_offset():
    rng = np.random.default_rng(2)
    params = InertialParams.from_com(5.0, np.zeros(3), COBOT_J)
    state = random_state(rng)
    a_c, alpha = rng.normal(size=3), rng.normal(size=3)
    w = inverse_dynamics(params, state, a_c, alpha)
    assert np.allclose(w.F, 5.0 * state.R.T @ a_c)
    assert np.allclose(w.M, COBOT_J @ alpha + np.cross(state.omega, COBOT_J @ state.omega))


def test_singular_inertia():
    params = InertialParams.from_com(1.0, np.zeros(3), np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(SingularInertiaError):
        forward_dynamics(params, RigidBodyState(), Wrench(np.zeros(3), np.zeros(3)))


def test_inverse_dynamics_rejects_nan():
    with pytest.raises(InvalidInputError):
        inverse_dynamics(cobot_params(), RigidBodyState(), [np.nan, 0, 0], np.zeros(3))


def test_parallel_axis_examples():
    J_s = np.diag([0.1, 0.2, 0.3])
    assert np.array_equal(parallel_axis(J_s, 6.0, np.zeros(3)), J_s)
    J_c = parallel_axis(J_s, 6.0, [0.1, 0, 0])
    assert np.allclose(J_c, J_s + np.diag([0, 0.06, 0.06]), rtol=0, atol=1e-15)
    assert np.allclose(parallel_axis_inv(J_c, 6.0, [0.1, 0, 0]), J_s, rtol=0, atol=1e-12)


def test_parallel_axis_inv_unphysical():
    with pytest.raises(InconsistentParametersError):
        parallel_axis_inv(np.diag([0.01, 0.01, 0.01]), 10.0, [0.1, 0.1, 0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 20), st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3),
       st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_parallel_axis_round_trip(m, p, d):
    J_s = np.diag(d)
    back = parallel_axis_inv(parallel_axis(J_s, m, p), m, p)
    assert np.allclose(back, J_s, rtol=0, atol=1e-12)


def test_grasped_params_frozen():
    # load1: 1.2 kg at (0.10, -0.05, 0.08) with own inertia diag(0.002, 0.003, 0.0025)
    pi = grasped_params("load1").vector
    expected = [7.247, 0.12, -0.06, 0.096,
                0.0453 + 0.002 + 1.2 * (0.05**2 + 0.08**2),
                -1.2 * 0.10 * -0.05,
                -1.2 * 0.10 * 0.08,
                0.0417 + 0.003 + 1.2 * (0.10**2 + 0.08**2),
                -1.2 * -0.05 * 0.08,
                0.0519 + 0.0025 + 1.2 * (0.10**2 + 0.05**2)]
    assert np.allclose(pi, expected, rtol=0, atol=1e-15)
    assert grasped_params("load1").mass == pytest.approx(6.047 + 1.2)


def test_params_serialisation_round_trip():
    p = grasped_params("load2")
    q = InertialParams.from_dict(p.to_dict())
    assert np.array_equal(p.vector, q.vector)
    assert np.allclose(InertialParams.from_com(p.mass, p.p_off, p.J_s).vector, p.vector)


def test_pure_drift():
    state = RigidBodyState(v=[0.1, -0.2, 0.3])
    x = state.to_array()
    out = rk4_hold(x, np.zeros(3), np.zeros(3), *model_arrays(cobot_params()), 1e-3, 1000)
    assert np.allclose(out[:3], [0.1, -0.2, 0.3], rtol=0, atol=1e-14)


def test_principal_axis_spin_is_fixed_point():
    params = cobot_params()
    x = RigidBodyState(omega=[0, 0, 1.5]).to_array()
    out = rk4_hold(x, np.zeros(3), np.zeros(3), *model_arrays(params), 1e-3, 10_000)
    assert np.allclose(out[10:13], [0, 0, 1.5], rtol=0, atol=1e-9)


def test_energy_conserved_torque_free():
    params = grasped_params("load1")
    state = RigidBodyState(v=[0.1, 0.0, -0.05], omega=[0.3, -0.4, 0.5])
    x1 = rk4_hold(state.to_array(), np.zeros(3), np.zeros(3), *model_arrays(params), 1e-3, 10_000)
    T0 = kinetic_energy(params, state)
    T1 = kinetic_energy(params, RigidBodyState.from_array(x1))
    assert abs(T1 - T0) / T0 < 1e-7


def test_integrate_step_matches_kernel_and_keeps_unit_quaternion():
    rng = np.random.default_rng(4)
    params = grasped_params()
    state = random_state(rng)
    u = rng.uniform(-1, 1, 6)
    A = default_actuation_matrix()
    s1 = integrate_step(params, state, u, 1e-3, A)
    w = A.matrix @ u
    x1 = rk4_hold(state.to_array(), w[:3], w[3:], *model_arrays(params), 1e-3, 1)
    assert np.allclose(s1.to_array(), x1, rtol=0, atol=1e-15)
    assert abs(np.linalg.norm(s1.q) - 1) < 1e-9
