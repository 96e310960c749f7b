import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import random_input, random_state, random_unit_quat, rot_x, rot_y, rot_z
from tiltmpc.model import (Disturbance, Dynamics, Input, IntegrationError, PlantState, RobotParams, State,
                           control_deriv, plant_deriv, quat_error_vec, quat_mul, quat_to_rot, quat_to_rpy,
                           rk4_step, rotor_wrench, rpy_to_quat)


def wrench_oracle(alpha, f, params):
    """Sum of per-rotor forces and torques with explicitly composed rotations."""
    force = np.zeros(3)
    torque = np.zeros(3)
    for i in range(params.rotor_count):
        rot = rot_z(params.arm_azimuth[i]) @ rot_x(alpha[i])
        fi = rot @ np.array([0.0, 0.0, f[i]])
        drag = rot @ np.array([0.0, 0.0, -params.spin_direction[i] * f[i] * params.torque_ratio])
        force += fi
        torque += drag + np.cross(params.rotor_positions[i], fi)
    return force, torque


class TestParams:
    def test_defaults_are_valid(self, params):
        assert params.rotor_count == 4
        assert sum(params.spin_direction) == 0
        assert params.hover_thrust == pytest.approx(2.773 * 9.81 / 4)

    @pytest.mark.parametrize("kw", [dict(mass=0.0), dict(inertia=(1.0, -1.0, 1.0)),
                                    dict(arm_azimuth=(0.0, 1.0), spin_direction=(1, -1)),
                                    dict(thrust_min=5.0, thrust_max=5.0), dict(thrust_min=-1.0),
                                    dict(servo_min=1.0, servo_max=0.5), dict(t_servo=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RobotParams(**kw)


class TestRotorWrench:
    def test_symmetric_hover(self, params):
        w = rotor_wrench(np.zeros(4), np.full(4, params.mass * params.gravity / 4), params)
        np.testing.assert_allclose(w.force, [0, 0, 27.20313], atol=1e-5)
        np.testing.assert_allclose(w.torque, 0.0, atol=1e-12)

    def test_single_rotor_torque(self, params):
        w = rotor_wrench(np.zeros(4), np.array([1.0, 0, 0, 0]), params)
        np.testing.assert_allclose(w.force, [0, 0, 1], atol=1e-15)
        arm = 0.2 / math.sqrt(2)  # rotor 1 sits at azimuth 45 deg
        # p x e_z = (p_y, -p_x, 0); drag adds -d_1 * k_q/k_t with d_1 = -1
        np.testing.assert_allclose(w.torque, [arm, -arm, 0.0153], atol=1e-12)

    def test_right_angle_tilt_is_horizontal(self, params):
        w = rotor_wrench(np.array([math.pi / 2, 0, 0, 0]), np.array([2.0, 0, 0, 0]), params)
        assert abs(w.force[2]) < 1e-15
        assert np.linalg.norm(w.force[:2]) == pytest.approx(2.0, abs=1e-12)

    def test_matches_explicit_rotations(self, params):
        rng = np.random.default_rng(1)
        for _ in range(50):
            alpha = rng.uniform(-1.5, 1.5, 4)
            f = rng.uniform(0, 20, 4)
            w = rotor_wrench(alpha, f, params)
            force, torque = wrench_oracle(alpha, f, params)
            np.testing.assert_allclose(w.force, force, atol=1e-12)
            np.testing.assert_allclose(w.torque, torque, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4),
           st.lists(st.floats(0, 30), min_size=4, max_size=4), st.floats(0, 10))
    def test_linear_in_thrust(self, alpha, f, c):
        params = RobotParams()
        a, f = np.array(alpha), np.array(f)
        w1 = rotor_wrench(a, c * f, params).vector()
        w2 = c * rotor_wrench(a, f, params).vector()
        np.testing.assert_allclose(w1, w2, rtol=1e-12, atol=1e-12)


class TestQuaternions:
    def test_error_of_identical_is_zero(self):
        q = random_unit_quat(np.random.default_rng(0))
        # the product q * q^-1 is exact only up to rounding in the vector part
        np.testing.assert_allclose(quat_error_vec(q, q), 0.0, atol=1e-15)

    def test_error_double_cover(self):
        q = random_unit_quat(np.random.default_rng(1))
        np.testing.assert_allclose(quat_error_vec(-q, q), 0.0, atol=1e-15)

    def test_error_is_shortest_rotation(self):
        # 10 deg about x, both quaternion signs give the same small error vector
        q = np.array([math.cos(0.0873), math.sin(0.0873), 0, 0])
        e1 = quat_error_vec(q, np.array([1.0, 0, 0, 0]))
        e2 = quat_error_vec(-q, np.array([1.0, 0, 0, 0]))
        np.testing.assert_allclose(e1, e2)
        assert e1[0] > 0

    def test_rpy_composition(self):
        r, p, y = np.radians([30.0, 60.0, 90.0])
        R = quat_to_rot(rpy_to_quat(r, p, y))
        np.testing.assert_allclose(R, rot_z(y) @ rot_y(p) @ rot_x(r), atol=1e-12)

    def test_rpy_matches_scipy_intrinsic_zyx(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            r, p, y = rng.uniform(-1.4, 1.4, 3)
            ref = Rotation.from_euler("ZYX", [y, p, r]).as_matrix()
            np.testing.assert_allclose(quat_to_rot(rpy_to_quat(r, p, y)), ref, atol=1e-12)
            np.testing.assert_allclose(quat_to_rpy(rpy_to_quat(r, p, y)), [r, p, y], atol=1e-12)

    def test_mul_matches_rotation_composition(self):
        rng = np.random.default_rng(3)
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        np.testing.assert_allclose(quat_to_rot(quat_mul(a, b)), quat_to_rot(a) @ quat_to_rot(b), atol=1e-12)


class TestControlDeriv:
    def test_hover_equilibrium(self, params):
        x = State.hover(params, (0.3, -0.2, 1.0))
        u = Input(np.full(4, params.hover_thrust), np.zeros(4))
        # cos(45 deg) and sin(45 deg) differ by one ulp, so the torque sum is ~1e-15, not 0
        np.testing.assert_allclose(control_deriv(x, u, Disturbance(), params), 0.0, atol=1e-12)

    def test_quaternion_kinematics_yaw_rate(self, params):
        x = State.hover(params)
        x.w = np.array([0.0, 0.0, 1.0])
        u = Input(np.full(4, params.hover_thrust), np.zeros(4))
        xd = control_deriv(x, u, None, params)
        np.testing.assert_allclose(xd[6:10], [0, 0, 0, 0.5], atol=1e-15)

    def test_servo_rate(self, params):
        x = State.hover(params)
        u = Input(np.full(4, params.hover_thrust), np.ones(4))
        xd = control_deriv(x, u, None, params)
        np.testing.assert_allclose(xd[13:17], 1 / 0.0859, rtol=1e-12)
        assert xd[13] == pytest.approx(11.641, abs=5e-4)

    def test_free_fall(self, params):
        rng = np.random.default_rng(4)
        x = random_state(rng, params)
        u = np.r_[np.zeros(4), rng.uniform(-1, 1, 4)]
        xd = control_deriv(x, u, None, params)
        np.testing.assert_array_equal(xd[3:6], [0.0, 0.0, -params.gravity])

    def test_disturbance_force_enters_world_frame(self, params):
        x = State.hover(params)
        x.q = rpy_to_quat(0.3, -0.2, 1.0)
        u = Input(np.zeros(4), np.zeros(4))
        d = Disturbance(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        xd = control_deriv(x, u, d, params)
        np.testing.assert_allclose(xd[3:6], np.array([1, 2, 3]) / params.mass + [0, 0, -params.gravity],
                                   atol=1e-15)

    def test_rejects_non_unit_quaternion(self, params):
        x = State.hover(params).vector()
        x[6] = 1.001
        with pytest.raises(ValueError):
            control_deriv(x, np.zeros(8), None, params)


def fd_jacobians(f, x, u, eps=1e-6):
    jx = np.empty((x.size, x.size))
    ju = np.empty((x.size, u.size))
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = eps
        jx[:, i] = (f(x + d, u) - f(x - d, u)) / (2 * eps)
    for i in range(u.size):
        d = np.zeros_like(u)
        d[i] = eps
        ju[:, i] = (f(x, u + d) - f(x, u - d)) / (2 * eps)
    return jx, ju


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("servo,thrust", [(True, False), (False, False), (True, True)])
def test_dynamics_jacobians_match_finite_differences(params, servo, thrust):
    dyn = Dynamics(params, servo=servo, thrust=thrust)
    rng = np.random.default_rng(5)
    fext = np.array([0.5, -0.3, 1.0])
    for _ in range(100):
        x = random_state(rng, params, n_extra=4 if thrust else 0)
        if not servo:
            x = np.r_[x[:13], x[17:]]
        u = random_input(rng, params)
        _, jx, ju = dyn.jac(x, u, fext)
        jx_fd, ju_fd = fd_jacobians(lambda a, b: dyn.deriv(a, b, fext), x, u)
        assert rel_err(jx, jx_fd) <= 1e-5
        assert rel_err(ju, ju_fd) <= 1e-5


class TestPlant:
    def test_without_thrust_states_equals_control_model(self, params):
        rng = np.random.default_rng(6)
        x = random_state(rng, params)
        u = random_input(rng, params)
        d = Disturbance(rng.normal(size=3), rng.normal(size=3))
        plant = PlantState.from_state(x, params)
        assert np.array_equal(plant_deriv(plant, u, d, params, 0.0), control_deriv(x, u, d, params))

    def test_dead_time_holds_thrust_at_zero(self, params):
        plant = PlantState.from_state(State.hover(params), params, thrust_model=True, thrust=np.zeros(4))
        u = np.r_[np.full(4, 7.0), np.zeros(4)]
        for now in (0.0, 0.1, 0.349):
            xd = plant_deriv(plant, u, None, params, now, dead_time=True)
            np.testing.assert_array_equal(xd[17:], 0.0)
        xd = plant_deriv(plant, u, None, params, 0.35, dead_time=True)
        np.testing.assert_allclose(xd[17:], 7.0 / 0.0942)

    def test_thrust_lag_rate(self, params):
        plant = PlantState.from_state(State.hover(params), params, thrust_model=True, thrust=np.full(4, 5.0))
        u = np.r_[np.full(4, 7.0), np.zeros(4)]
        xd = plant_deriv(plant, u, None, params, 0.0, dead_time=True)
        np.testing.assert_allclose(xd[17:], 2 / 0.0942, rtol=1e-12)
        assert xd[17] == pytest.approx(21.231, abs=5e-4)


def servo_only(x, u):
    """Scalar first-order lag used for integrator checks."""
    return (u - x) / 0.0859


class TestRk4:
    def test_servo_step_matches_exponential(self):
        a = rk4_step(np.array([0.0]), 1.0, 0.01, servo_only)
        assert abs(a[0] - (1 - math.exp(-0.01 / 0.0859))) <= 1e-6
        # 1 - exp(-0.01/0.0859) = 0.1098937...
        assert a[0] == pytest.approx(0.1098937, abs=1e-6)

    def test_zero_derivative_is_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(rk4_step(x, None, 0.1, lambda x, u: np.zeros_like(x)), x)

    @staticmethod
    def global_error(h, t_end=0.4):
        x = np.array([0.0])
        for _ in range(int(round(t_end / h))):
            x = rk4_step(x, 1.0, h, servo_only)
        return abs(x[0] - (1 - math.exp(-t_end / 0.0859)))

    def test_halving_step_error_ratio(self):
        ratio = self.global_error(0.02) / self.global_error(0.01)
        assert 12 <= ratio <= 20

    def test_observed_order(self):
        errs = [self.global_error(h) for h in (0.04, 0.02, 0.01)]
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert all(3.5 <= p <= 4.5 for p in orders)

    def test_quaternion_renormalised(self, params):
        rng = np.random.default_rng(7)
        dyn = Dynamics(params)
        for _ in range(50):
            x = random_state(rng, params)
            x = rk4_step(x, random_input(rng, params), 0.005, lambda a, b: dyn.deriv(a, b))
            assert abs(np.linalg.norm(x[6:10]) - 1) <= 1e-12

    def test_non_finite_raises(self):
        with pytest.raises(IntegrationError):
            rk4_step(np.array([1.0]), None, 0.1, lambda x, u: np.array([np.inf]))

    def test_rejects_non_positive_step(self):
        with pytest.raises(ValueError):
            rk4_step(np.array([1.0]), None, 0.0, servo_only)
