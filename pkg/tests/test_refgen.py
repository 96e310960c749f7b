import math

import numpy as np
import pytest

from tiltmpc.model import Input, control_deriv, quat_conj, quat_mul, quat_to_rot, quat_to_rpy, rotor_wrench, rpy_to_quat
from tiltmpc.refgen import (PoseTarget, PoseTrajectory, build_figure8, constant_trajectory, setpoint_window,
                            trajectory_window)


def body_rate_oracle(rpy_fn, t, h=1e-6):
    """omega = 2 V(q^-1 q_dot) with q_dot by central differences of the attitude quaternion."""
    def q_at(s):
        e = rpy_fn(np.array([s]))[0][0]
        return rpy_to_quat(*e)
    q = q_at(t)
    qd = (q_at(t + h) - q_at(t - h)) / (2 * h)
    return 2 * quat_mul(quat_conj(q), qd)[1:]


class TestSetpointWindow:
    def test_identity_is_hover_split(self, params, amap):
        win = setpoint_window(PoseTarget.from_rpy([0.4, -1, 2], 0, 0, 0), params, amap, 20, 0.1)
        np.testing.assert_allclose(win.u[:, :4], params.mass * params.gravity / 4, rtol=1e-12)
        np.testing.assert_allclose(win.u[:, 4:], 0.0, atol=1e-12)
        np.testing.assert_allclose(win.x[:, 0:3], np.tile([0.4, -1, 2], (21, 1)))

    def test_sizes(self, params, amap):
        win = setpoint_window(PoseTarget.from_rpy([0, 0, 1], 0, 0, 0), params, amap, 20, 0.1)
        assert win.x.shape == (21, 17)
        assert win.u.shape == (20, 8)
        assert win.horizon == 20

    def test_tilted_pose_keeps_gravity_norm(self, params, amap):
        q = rpy_to_quat(0.5, 0.5, -0.3)
        win = setpoint_window(PoseTarget(np.zeros(3), q), params, amap, 20, 0.1)
        mg = params.mass * params.gravity
        expected = quat_to_rot(q).T @ np.array([0, 0, mg])
        np.testing.assert_allclose(win.wrench[:, :3], np.tile(expected, (21, 1)), atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(win.wrench[:, :3], axis=1), mg, rtol=1e-12)
        np.testing.assert_array_equal(win.x[:, 3:6], 0.0)
        np.testing.assert_array_equal(win.x[:, 10:13], 0.0)
        np.testing.assert_array_equal(win.wrench[:, 3:], 0.0)

    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(ValueError):
            PoseTarget(np.zeros(3), np.array([1.0, 0.1, 0, 0]))

    def test_feedforward_is_equilibrium(self, params, amap):
        win = setpoint_window(PoseTarget.from_rpy([0, 0, 1], 0.5, 0.5, -0.3), params, amap, 5, 0.1)
        for k in range(5):
            xd = control_deriv(win.x[k], win.u[k], None, params)
            np.testing.assert_allclose(xd[0:6], 0.0, atol=1e-9)
            np.testing.assert_allclose(xd[6:13], 0.0, atol=1e-9)

    def test_allocation_embedding(self, params, amap):
        win = setpoint_window(PoseTarget.from_rpy([0, 0, 1], 0.5, 0.5, -0.3), params, amap, 5, 0.1)
        for k in range(5):
            w = rotor_wrench(win.u[k, 4:], win.u[k, :4], params).vector()
            np.testing.assert_allclose(w, win.wrench[k], atol=1e-8)


class TestTrajectory:
    def test_constant_trajectory_equals_setpoint(self, params, amap):
        traj = constant_trajectory([0.2, 0.1, 1.0], 0.3, -0.2, 1.0)
        a = trajectory_window(traj, 3.7, params, amap, 20, 0.1)
        b = setpoint_window(PoseTarget.from_rpy([0.2, 0.1, 1.0], 0.3, -0.2, 1.0), params, amap, 20, 0.1)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.u, b.u)

    def test_figure8_initial_pose(self, params, amap):
        win = trajectory_window(build_figure8(20.0), 0.0, params, amap, 20, 0.1)
        np.testing.assert_allclose(win.x[0, 0:3], [1.0, 0.0, 1.3], atol=1e-15)
        np.testing.assert_allclose(quat_to_rpy(win.x[0, 6:10]), [0.0, 0.5, math.pi / 2], atol=1e-12)

    def test_figure8_formulas(self):
        # direct evaluation of the published parametric forms
        T = 20.0
        w = 2 * math.pi / T
        assert w == pytest.approx(math.pi / 10)
        traj = build_figure8(T)
        t = np.random.default_rng(0).uniform(0, 40, 50)
        p, _, _ = traj.position(t)
        e, _, _ = traj.rpy(t)
        np.testing.assert_allclose(p[:, 0], np.cos(w * t), atol=1e-15)
        np.testing.assert_allclose(p[:, 1], np.sin(2 * w * t) / 2, atol=1e-15)
        np.testing.assert_allclose(p[:, 2], 0.3 * np.sin(2 * w * t + math.pi / 2) + 1.0, atol=1e-14)
        np.testing.assert_allclose(e[:, 0], -np.sin(2 * w * t) / 2, atol=1e-15)
        np.testing.assert_allclose(e[:, 2], math.pi / 2 * np.sin(w * t + math.pi) + math.pi / 2, atol=1e-14)

    def test_figure8_height_range(self):
        p, _, _ = build_figure8(20.0).position(np.linspace(0, 20, 2001))
        assert p[:, 2].min() == pytest.approx(0.7, abs=1e-12)
        assert p[:, 2].max() == pytest.approx(1.3, abs=1e-12)

    def test_rejects_bad_period(self):
        with pytest.raises(ValueError):
            build_figure8(0.0)

    @pytest.mark.parametrize("T", [20.0, 10.0])
    def test_derivatives_match_finite_differences(self, T):
        traj = build_figure8(T)
        t = np.random.default_rng(1).uniform(0, 2 * T, 100)
        h = 1e-5
        for fn in (traj.position, traj.rpy):
            f0, d0, dd0 = fn(t)
            fp, dp, _ = fn(t + h)
            fm, dm, _ = fn(t - h)
            scale = max(1.0, np.abs(d0).max())
            assert np.abs((fp - fm) / (2 * h) - d0).max() / scale <= 1e-4
            scale = max(1.0, np.abs(dd0).max())
            assert np.abs((dp - dm) / (2 * h) - dd0).max() / scale <= 1e-4

    def test_pure_yaw_rate(self, params, amap):
        c = 0.7

        def rpy(t):
            t = np.asarray(t, float)
            z = np.zeros_like(t)
            return (np.stack([z, z, c * t], -1), np.stack([z, z, z + c], -1), np.zeros(t.shape + (3,)))
        traj = PoseTrajectory(constant_trajectory([0, 0, 1]).position, rpy)
        win = trajectory_window(traj, 1.0, params, amap, 10, 0.1)
        np.testing.assert_array_equal(win.x[:, 10:13], np.tile([0.0, 0.0, c], (11, 1)))

    def test_body_rates_match_quaternion_derivative(self, params, amap):
        traj = build_figure8(10.0)
        t0 = 1.3
        win = trajectory_window(traj, t0, params, amap, 20, 0.1)
        for k in range(0, 21, 4):
            np.testing.assert_allclose(win.x[k, 10:13], body_rate_oracle(traj.rpy, t0 + 0.1 * k), atol=1e-7)

    def test_body_acceleration_matches_finite_difference(self, params, amap):
        traj = build_figure8(10.0)
        h = 1e-5
        a = trajectory_window(traj, 2.0 + h, params, amap, 3, 0.1)
        b = trajectory_window(traj, 2.0 - h, params, amap, 3, 0.1)
        c = trajectory_window(traj, 2.0, params, amap, 3, 0.1)
        dw_fd = (a.x[:, 10:13] - b.x[:, 10:13]) / (2 * h)
        np.testing.assert_allclose(c.wrench[:, 3:] / np.asarray(params.inertia), dw_fd, atol=1e-6)

    def test_window_velocity_consistency(self, params, amap):
        T, dt = 20.0, 0.1
        win = trajectory_window(build_figure8(T), 4.0, params, amap, 20, dt)
        w = 2 * math.pi / T
        fd = (win.x[2:, 0:3] - win.x[:-2, 0:3]) / (2 * dt)
        # central difference error is dt^2/6 |p'''|, and |p'''| <= 4 w^3 for this curve
        assert np.abs(fd - win.x[1:-1, 3:6]).max() <= dt * dt / 6 * 4 * w ** 3 * 1.01

    def test_feedforward_translational_dynamics(self, params, amap):
        traj = build_figure8(10.0)
        win = trajectory_window(traj, 0.7, params, amap, 20, 0.1)
        assert not win.saturated.any()
        _, _, acc = traj.position(0.7 + 0.1 * np.arange(20))
        for k in range(20):
            xd = control_deriv(win.x[k], win.u[k], None, params)
            np.testing.assert_allclose(xd[0:3], win.x[k, 3:6], atol=1e-12)
            np.testing.assert_allclose(xd[3:6], acc[k], atol=1e-8)
            np.testing.assert_allclose(xd[13:], 0.0, atol=1e-12)

    def test_allocation_embedding(self, params, amap):
        win = trajectory_window(build_figure8(10.0), 2.2, params, amap, 20, 0.1)
        for k in range(20):
            w = rotor_wrench(win.u[k, 4:], win.u[k, :4], params).vector()
            np.testing.assert_allclose(w, win.wrench[k], atol=1e-8)

    def test_external_force_reduces_feedforward(self, params, amap):
        tgt = PoseTarget.from_rpy([0, 0, 1], 0, 0, 0)
        a = setpoint_window(tgt, params, amap, 3, 0.1)
        b = setpoint_window(tgt, params, amap, 3, 0.1, f_ext=np.array([0, 0, 2.0]))
        np.testing.assert_allclose(a.wrench[:, 2] - b.wrench[:, 2], 2.0, rtol=1e-12)


def test_input_dataclass_roundtrip(params):
    u = Input(np.full(4, 2.0), np.zeros(4))
    np.testing.assert_array_equal(u.vector(), np.r_[np.full(4, 2.0), np.zeros(4)])
