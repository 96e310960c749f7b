"""Full-state reference windows for set poses and parametric pose trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .alloc import AllocationMap, allocate_batch
from .model import N_RIGID, RobotParams, quat_to_rot, rpy_to_quat

# f(t) -> (value, first derivative, second derivative), each shaped (..., 3)
Profile = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class PoseTarget:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-9:
            raise ValueError("target quaternion must be unit")

    @classmethod
    def from_rpy(cls, p, roll, pitch, yaw) -> PoseTarget:
        return cls(np.asarray(p, float), rpy_to_quat(roll, pitch, yaw))


@dataclass(frozen=True)
class PoseTrajectory:
    position: Profile
    rpy: Profile
    period: float = math.inf


@dataclass
class ReferenceWindow:
    x: np.ndarray          # (N+1, 13+Np) full states
    u: np.ndarray          # (N, 2Np)
    wrench: np.ndarray     # (N+1, 6) body-frame feedforward wrench
    saturated: np.ndarray  # (N+1,) allocation clamped at that stage

    @property
    def horizon(self) -> int:
        return self.u.shape[0]


def build_figure8(T: float) -> PoseTrajectory:
    """Lemniscate pose trajectory with period ``T`` and analytic derivatives."""
    if T <= 0:
        raise ValueError("period must be positive")
    w = 2 * math.pi / T

    def position(t):
        t = np.asarray(t, float)
        s1, c1 = np.sin(w * t), np.cos(w * t)
        s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
        # 0.3 sin(2wt + pi/2) + 1 == 0.3 cos(2wt) + 1
        p = np.stack([c1, s2 / 2, 0.3 * c2 + 1.0], axis=-1)
        dp = np.stack([-w * s1, w * c2, -0.6 * w * s2], axis=-1)
        ddp = np.stack([-w * w * c1, -2 * w * w * s2, -1.2 * w * w * c2], axis=-1)
        return p, dp, ddp

    def rpy(t):
        t = np.asarray(t, float)
        s1, c1 = np.sin(w * t), np.cos(w * t)
        s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
        # yaw = pi/2 sin(wt + pi) + pi/2 == pi/2 (1 - sin wt)
        e = np.stack([-s2 / 2, 0.5 * c1, math.pi / 2 * (1 - s1)], axis=-1)
        de = np.stack([-w * c2, -0.5 * w * s1, -math.pi / 2 * w * c1], axis=-1)
        dde = np.stack([2 * w * w * s2, -0.5 * w * w * c1, math.pi / 2 * w * w * s1], axis=-1)
        return e, de, dde

    return PoseTrajectory(position, rpy, T)


def constant_trajectory(target_p, roll=0.0, pitch=0.0, yaw=0.0) -> PoseTrajectory:
    p0 = np.asarray(target_p, float)
    e0 = np.array([roll, pitch, yaw], float)

    def position(t):
        shape = np.shape(t) + (3,)
        return np.broadcast_to(p0, shape).copy(), np.zeros(shape), np.zeros(shape)

    def rpy(t):
        shape = np.shape(t) + (3,)
        return np.broadcast_to(e0, shape).copy(), np.zeros(shape), np.zeros(shape)

    return PoseTrajectory(position, rpy)


def euler_rates_to_body(e, de, dde):
    """Body angular velocity and acceleration from Z-Y-X Euler angles and rates."""
    phi, theta = e[..., 0], e[..., 1]
    dphi, dtheta, dpsi = de[..., 0], de[..., 1], de[..., 2]
    ddphi, ddtheta, ddpsi = dde[..., 0], dde[..., 1], dde[..., 2]
    sf, cf = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    w = np.stack([
        dphi - dpsi * st,
        dtheta * cf + dpsi * sf * ct,
        -dtheta * sf + dpsi * cf * ct,
    ], axis=-1)
    dw = np.stack([
        ddphi - ddpsi * st - dpsi * dtheta * ct,
        ddtheta * cf - dtheta * dphi * sf + ddpsi * sf * ct + dpsi * (dphi * cf * ct - dtheta * sf * st),
        -ddtheta * sf - dtheta * dphi * cf + ddpsi * cf * ct - dpsi * (dphi * sf * ct + dtheta * cf * st),
    ], axis=-1)
    return w, dw


def _window(p, v, acc, q, w, dw, params: RobotParams, amap: AllocationMap, f_ext) -> ReferenceWindow:
    k = p.shape[0]
    rot = quat_to_rot(q)
    world_force = params.mass * (acc + np.array([0.0, 0.0, params.gravity]))
    if f_ext is not None:
        world_force = world_force - f_ext
    force = np.einsum("kji,kj->ki", rot, world_force)
    torque = dw * np.asarray(params.inertia)
    wrench = np.concatenate([force, torque], axis=1)
    f_r, a_r, sat = allocate_batch(amap, wrench)
    x = np.empty((k, N_RIGID + params.rotor_count))
    x[:, 0:3] = p
    x[:, 3:6] = v
    x[:, 6:10] = q
    x[:, 10:13] = w
    x[:, 13:] = a_r
    u = np.concatenate([f_r, a_r], axis=1)[:-1]
    return ReferenceWindow(x, u, wrench, sat)


def setpoint_window(target: PoseTarget, params: RobotParams, amap: AllocationMap, horizon: int,
                    dt: float, f_ext=None) -> ReferenceWindow:
    """Constant pose at every stage with zero rates; hover feedforward wrench."""
    k = horizon + 1
    zeros = np.zeros((k, 3))
    p = np.tile(np.asarray(target.p, float), (k, 1))
    q = np.tile(np.asarray(target.q, float), (k, 1))
    return _window(p, zeros, zeros, q, zeros, zeros, params, amap, f_ext)


def trajectory_window(traj: PoseTrajectory, t_now: float, params: RobotParams, amap: AllocationMap,
                      horizon: int, dt: float, f_ext=None) -> ReferenceWindow:
    """Trajectory sampled at ``t_now + k dt`` with feedforward from its derivatives."""
    t = t_now + dt * np.arange(horizon + 1)
    p, v, acc = traj.position(t)
    e, de, dde = traj.rpy(t)
    q = rpy_to_quat(e[:, 0], e[:, 1], e[:, 2])
    w, dw = euler_rates_to_body(e, de, dde)
    return _window(p, v, acc, q, w, dw, params, amap, f_ext)
