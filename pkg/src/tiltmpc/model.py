"""Tiltable-rotor multirotor model: parameters, rotor wrench, dynamics, RK4.

State layout (world ENU, body FLU, Hamilton scalar-first quaternion)::

    x = [p(3), v(3), q(4), w(3), alpha(Np)]          control model
    x = [p(3), v(3), q(4), w(3), alpha(Np), f(Np)]   with thrust states

Input layout: ``u = [f_c(Np), alpha_c(Np)]``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

POS = slice(0, 3)
VEL = slice(3, 6)
QUAT = slice(6, 10)
RATE = slice(10, 13)
N_RIGID = 13


class IntegrationError(RuntimeError):
    """Raised when an integration step produces a non-finite state."""


@dataclass(frozen=True)
class RobotParams:
    mass: float = 2.773
    inertia: tuple[float, float, float] = (0.0417, 0.0395, 0.0707)
    gravity: float = 9.81
    arm_length: float = 0.2
    arm_azimuth: tuple[float, ...] = tuple(math.radians(a) for a in (45.0, 135.0, 225.0, 315.0))
    spin_direction: tuple[int, ...] = (-1, 1, -1, 1)
    thrust_coeff: float = 1.5e-5  # N s^2, only used to map rotor speed to thrust
    torque_ratio: float = 0.0153  # k_q / k_t in m
    thrust_min: float = 0.0
    thrust_max: float = 30.0
    servo_min: float = -math.pi / 2
    servo_max: float = math.pi / 2
    t_servo: float = 0.0859
    t_thrust: float = 0.0942
    t_dead: float = 0.35

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("inertia needs three positive diagonal entries")
        if self.rotor_count < 3:
            raise ValueError("at least three rotors are required")
        if len(self.spin_direction) != self.rotor_count:
            raise ValueError("spin_direction length must match arm_azimuth")
        if any(d not in (-1, 1) for d in self.spin_direction):
            raise ValueError("spin directions must be +1 or -1")
        if self.thrust_min < 0 or self.thrust_min >= self.thrust_max:
            raise ValueError("need 0 <= thrust_min < thrust_max")
        if self.servo_min >= self.servo_max:
            raise ValueError("need servo_min < servo_max")
        if self.t_servo <= 0:
            raise ValueError("t_servo must be positive")
        if self.t_thrust <= 0 or self.t_dead < 0:
            raise ValueError("t_thrust must be positive and t_dead non-negative")

    @property
    def rotor_count(self) -> int:
        return len(self.arm_azimuth)

    @property
    def rotor_positions(self) -> np.ndarray:
        """Rotor hub positions in the body frame, shape (Np, 3)."""
        az = np.asarray(self.arm_azimuth)
        return self.arm_length * np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.diag(self.inertia)

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity / self.rotor_count


class Wrench(NamedTuple):
    force: np.ndarray
    torque: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@dataclass
class Disturbance:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world frame
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))  # body frame


@dataclass
class State:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray
    alpha: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.w, self.alpha]).astype(float)

    @classmethod
    def from_vector(cls, x) -> State:
        x = np.asarray(x, dtype=float)
        return cls(x[POS].copy(), x[VEL].copy(), x[QUAT].copy(), x[RATE].copy(), x[N_RIGID:].copy())

    @classmethod
    def hover(cls, params: RobotParams, p=(0.0, 0.0, 0.0)) -> State:
        n = params.rotor_count
        return cls(np.asarray(p, float), np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros(n))


@dataclass
class Input:
    thrust: np.ndarray
    servo: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.thrust, self.servo]).astype(float)

    @classmethod
    def from_vector(cls, u) -> Input:
        u = np.asarray(u, dtype=float)
        n = u.size // 2
        return cls(u[:n].copy(), u[n:].copy())


# -- quaternion utilities ---------------------------------------------------

def quat_mul(a, b) -> np.ndarray:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rot(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (body to world)."""
    w, x, y, z = np.moveaxis(np.asarray(q, float), -1, 0)
    r = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return r.reshape(r.shape[:-1] + (3, 3))


def rpy_to_quat(roll, pitch, yaw) -> np.ndarray:
    """Intrinsic Z-Y-X Euler angles to quaternion, R = Rz(yaw) Ry(pitch) Rx(roll)."""
    cr, sr = np.cos(np.multiply(roll, 0.5)), np.sin(np.multiply(roll, 0.5))
    cp, sp = np.cos(np.multiply(pitch, 0.5)), np.sin(np.multiply(pitch, 0.5))
    cy, sy = np.cos(np.multiply(yaw, 0.5)), np.sin(np.multiply(yaw, 0.5))
    return np.stack([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ], axis=-1)


def quat_to_rpy(q) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, float), -1, 0)
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def quat_error_vec(q, q_ref) -> np.ndarray:
    """Vector part of q * q_ref^-1, sign chosen for the shortest rotation."""
    qe = quat_mul(q, quat_conj(q_ref))
    sign = np.where(qe[..., 0] < 0, -1.0, 1.0)
    return sign[..., None] * qe[..., 1:]


def quat_right_matrix(p) -> np.ndarray:
    """Matrix M(p) with q * p = M(p) q."""
    pw, px, py, pz = np.moveaxis(np.asarray(p, float), -1, 0)
    m = np.stack([
        pw, -px, -py, -pz,
        px, pw, pz, -py,
        py, -pz, pw, px,
        pz, py, -px, pw,
    ], axis=-1)
    return m.reshape(m.shape[:-1] + (4, 4))


def normalize_quat(x: np.ndarray, sl: slice = QUAT) -> np.ndarray:
    x = np.array(x, dtype=float)
    q = x[..., sl]
    x[..., sl] = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return x


def _skew(v: np.ndarray) -> np.ndarray:
    z = np.zeros_like(v[..., 0])
    m = np.stack([z, -v[..., 2], v[..., 1], v[..., 2], z, -v[..., 0], -v[..., 1], v[..., 0], z], axis=-1)
    return m.reshape(v.shape[:-1] + (3, 3))


def _rot_matrix_h(q: np.ndarray) -> np.ndarray:
    qw = q[..., 0, None, None]
    qv = q[..., 1:]
    eye = np.eye(3)
    return ((qw * qw - np.sum(qv * qv, axis=-1)[..., None, None]) * eye
            + 2 * qv[..., :, None] * qv[..., None, :] + 2 * qw * _skew(qv))


def _rot_apply(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # homogeneous quadratic form, equals R(q) v for unit q
    qw = q[..., :1]
    qv = q[..., 1:]
    return ((qw * qw - np.sum(qv * qv, axis=-1, keepdims=True)) * v
            + 2 * qv * np.sum(qv * v, axis=-1, keepdims=True)
            + 2 * qw * np.cross(qv, v))


# -- rotor wrench ----------------------------------------------------------

def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rotor_wrench(alpha, f, params: RobotParams) -> Wrench:
    """Body-frame force and torque produced by all rotors.

    Each rotor thrusts along the Z axis of its tilted frame
    ``Rz(azimuth) Rx(alpha_i)`` and adds a drag torque ``-d_i * k_q/k_t * f_i``
    about the same axis; the thrust also acts at the hub position.
    Gyroscopic propeller torque is neglected.
    """
    alpha = np.asarray(alpha, float)
    f = np.asarray(f, float)
    if alpha.shape != (params.rotor_count,) or f.shape != (params.rotor_count,):
        raise ValueError(f"expected {params.rotor_count} servo angles and thrusts")
    force = np.zeros(3)
    torque = np.zeros(3)
    for i, pos in enumerate(params.rotor_positions):
        rot = _rot_z(params.arm_azimuth[i]) @ _rot_x(alpha[i])
        fi = rot @ np.array([0.0, 0.0, f[i]])
        ti = rot @ np.array([0.0, 0.0, -params.spin_direction[i] * f[i] * params.torque_ratio])
        force += fi
        torque += ti + np.cross(pos, fi)
    return Wrench(force, torque)


@functools.lru_cache(maxsize=32)
def virtual_input_columns(params: RobotParams) -> tuple[np.ndarray, np.ndarray]:
    """Wrench per unit lateral (f sin a) and vertical (f cos a) rotor thrust.

    Returns two (6, Np) matrices evaluated through :func:`rotor_wrench`.
    """
    n = params.rotor_count
    lateral = np.zeros((6, n))
    vertical = np.zeros((6, n))
    for i in range(n):
        unit = np.zeros(n)
        unit[i] = 1.0
        vertical[:, i] = rotor_wrench(np.zeros(n), unit, params).vector()
        tilt = np.zeros(n)
        tilt[i] = math.pi / 2
        w = rotor_wrench(tilt, unit, params).vector()
        # remove the cos(pi/2) ~ 6e-17 vertical leak
        lateral[:, i] = w - math.cos(math.pi / 2) * vertical[:, i]
    lateral.setflags(write=False)
    vertical.setflags(write=False)
    return lateral, vertical


# -- continuous dynamics -----------------------------------------------------

class Dynamics:
    """Batched state derivative and Jacobians of the tilt-rotor model.

    ``servo`` keeps servo angles as first-order states; without it the
    commanded angle acts instantly.  ``thrust`` adds first-order thrust states.
    All array arguments may carry leading batch dimensions.
    """

    def __init__(self, params: RobotParams, servo: bool = True, thrust: bool = False):
        self.params = params
        self.servo = servo
        self.thrust = thrust
        n = params.rotor_count
        self.n_rotors = n
        self.alpha_idx = slice(N_RIGID, N_RIGID + n) if servo else None
        off = N_RIGID + (n if servo else 0)
        self.thrust_idx = slice(off, off + n) if thrust else None
        self.nx = off + (n if thrust else 0)
        self.nu = 2 * n
        lat, ver = virtual_input_columns(params)
        self._lat = np.array(lat)
        self._ver = np.array(ver)
        self._inertia = np.array(params.inertia)
        self._inv_mass = 1.0 / params.mass
        self._gvec = np.array([0.0, 0.0, -params.gravity])

    def _actuators(self, x, u):
        n = self.n_rotors
        thrust = x[..., self.thrust_idx] if self.thrust else u[..., :n]
        angle = x[..., self.alpha_idx] if self.servo else u[..., n:]
        return thrust, angle

    def deriv(self, x, u, f_ext=None, tau_ext=None) -> np.ndarray:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        thrust, angle = self._actuators(x, u)
        s, c = np.sin(angle), np.cos(angle)
        wrench = (thrust * s) @ self._lat.T + (thrust * c) @ self._ver.T
        q = x[..., QUAT]
        w = x[..., RATE]
        acc = _rot_apply(q, wrench[..., :3])
        if f_ext is not None:
            acc = acc + f_ext
        torque = wrench[..., 3:] - np.cross(w, self._inertia * w)
        if tau_ext is not None:
            torque = torque + tau_ext
        out = np.empty(x.shape[:-1] + (self.nx,))
        out[..., POS] = x[..., VEL]
        out[..., VEL] = acc * self._inv_mass + self._gvec
        out[..., QUAT] = 0.5 * quat_mul(q, np.concatenate([np.zeros_like(w[..., :1]), w], axis=-1))
        out[..., RATE] = torque / self._inertia
        n = self.n_rotors
        if self.servo:
            out[..., self.alpha_idx] = (u[..., n:] - x[..., self.alpha_idx]) / self.params.t_servo
        if self.thrust:
            out[..., self.thrust_idx] = (u[..., :n] - x[..., self.thrust_idx]) / self.params.t_thrust
        return out

    def jac(self, x, u, f_ext=None, tau_ext=None):
        """Return ``(xdot, d xdot/dx, d xdot/du)``."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        batch = x.shape[:-1]
        n = self.n_rotors
        nx, nu = self.nx, self.nu
        xdot = self.deriv(x, u, f_ext, tau_ext)
        thrust, angle = self._actuators(x, u)
        s, c = np.sin(angle), np.cos(angle)
        # d wrench / d thrust and d wrench / d angle, shape (..., 6, Np)
        dw_dt = self._lat * s[..., None, :] + self._ver * c[..., None, :]
        dw_da = self._lat * (thrust * c)[..., None, :] - self._ver * (thrust * s)[..., None, :]
        wrench = np.sum(dw_dt * thrust[..., None, :], axis=-1)
        force = wrench[..., :3]
        q = x[..., QUAT]
        qw = q[..., 0]
        qv = q[..., 1:]
        w = x[..., RATE]
        rot = _rot_matrix_h(q)
        inv_i = 1.0 / self._inertia

        jx = np.zeros(batch + (nx, nx))
        ju = np.zeros(batch + (nx, nu))
        eye3 = np.eye(3)
        jx[..., POS, VEL] = eye3

        # d(R(q) F)/dq for the homogeneous quadratic rotation form
        d_qw = 2 * qw[..., None] * force + 2 * np.cross(qv, force)
        dot = np.sum(qv * force, axis=-1)
        d_qv = (-2 * force[..., :, None] * qv[..., None, :]
                + 2 * dot[..., None, None] * eye3
                + 2 * qv[..., :, None] * force[..., None, :]
                - 2 * qw[..., None, None] * _skew(force))
        jx[..., VEL, 6] = d_qw * self._inv_mass
        jx[..., VEL, 7:10] = d_qv * self._inv_mass

        jx[..., QUAT, QUAT] = 0.5 * quat_right_matrix(
            np.concatenate([np.zeros_like(w[..., :1]), w], axis=-1))
        dq_dw = np.empty(batch + (4, 3))
        dq_dw[..., 0, :] = -qv
        dq_dw[..., 1:, :] = qw[..., None, None] * eye3 + _skew(qv)
        jx[..., QUAT, RATE] = 0.5 * dq_dw

        iw = self._inertia * w
        jx[..., RATE, RATE] = inv_i[:, None] * (-_skew(w) * self._inertia[None, :] + _skew(iw))

        # actuator columns
        dv_dt = rot @ dw_dt[..., :3, :] * self._inv_mass
        dv_da = rot @ dw_da[..., :3, :] * self._inv_mass
        dr_dt = dw_dt[..., 3:, :] * inv_i[:, None]
        dr_da = dw_da[..., 3:, :] * inv_i[:, None]
        if self.thrust:
            jx[..., VEL, self.thrust_idx] = dv_dt
            jx[..., RATE, self.thrust_idx] = dr_dt
        else:
            ju[..., VEL, :n] = dv_dt
            ju[..., RATE, :n] = dr_dt
        if self.servo:
            jx[..., VEL, self.alpha_idx] = dv_da
            jx[..., RATE, self.alpha_idx] = dr_da
            k = 1.0 / self.params.t_servo
            idx = np.arange(n)
            jx[..., N_RIGID + idx, N_RIGID + idx] = -k
            ju[..., N_RIGID + idx, n + idx] = k
        else:
            ju[..., VEL, n:] = dv_da
            ju[..., RATE, n:] = dr_da
        if self.thrust:
            k = 1.0 / self.params.t_thrust
            idx = np.arange(n)
            off = self.thrust_idx.start
            jx[..., off + idx, off + idx] = -k
            ju[..., off + idx, idx] = k
        return xdot, jx, ju


@functools.lru_cache(maxsize=32)
def _dynamics(params: RobotParams, servo: bool, thrust: bool) -> Dynamics:
    return Dynamics(params, servo=servo, thrust=thrust)


def _check_quat(x: np.ndarray, tol: float = 1e-6) -> None:
    norm = float(np.linalg.norm(x[QUAT]))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"quaternion norm {norm:.9f} is not unit")


def control_deriv(x, u, d: Disturbance | None, params: RobotParams) -> np.ndarray:
    """17-dim derivative of the prediction model (thrust acts instantly)."""
    x = np.asarray(x.vector() if isinstance(x, State) else x, float)
    u = np.asarray(u.vector() if isinstance(u, Input) else u, float)
    _check_quat(x)
    d = d or Disturbance()
    return _dynamics(params, True, False).deriv(x, u, d.force, d.torque)


@dataclass
class PlantState:
    """Simulator truth: control state, optional thrust states, spin-up timers.

    ``spinup_at[i]`` is the release time of a command sent to rotor ``i`` while
    it was stopped (nan when no spin-up is pending).
    """

    x: np.ndarray
    thrust_model: bool = False
    spinup_at: np.ndarray | None = None

    @classmethod
    def from_state(cls, state, params: RobotParams, thrust_model: bool = False,
                   thrust=None) -> PlantState:
        x = np.asarray(state.vector() if isinstance(state, State) else state, float)[:N_RIGID + params.rotor_count]
        if thrust_model:
            f = np.full(params.rotor_count, params.hover_thrust) if thrust is None else np.asarray(thrust, float)
            x = np.concatenate([x, f])
        return cls(x, thrust_model, np.full(params.rotor_count, np.nan))

    @property
    def thrust(self) -> np.ndarray | None:
        return self.x[N_RIGID + len(self.spinup_at):] if self.thrust_model else None


def delayed_command(plant: PlantState, f_cmd, params: RobotParams, now: float) -> np.ndarray:
    """Thrust command as seen by rotors that are still in their start-up dead time.

    Updates ``plant.spinup_at`` in place; only rotors sitting at zero thrust
    start a dead-time window.
    """
    f_cmd = np.asarray(f_cmd, float)
    if not plant.thrust_model or params.t_dead <= 0:
        return f_cmd
    f = plant.thrust
    stopped = (f <= 0.0) & np.isnan(plant.spinup_at) & (f_cmd > 0)
    plant.spinup_at[stopped] = now + params.t_dead
    out = f_cmd.copy()
    waiting = ~np.isnan(plant.spinup_at)
    out[waiting & (now < plant.spinup_at)] = 0.0
    plant.spinup_at[waiting & (now >= plant.spinup_at)] = np.nan
    return out


def plant_deriv(plant: PlantState, u, d: Disturbance | None, params: RobotParams, now: float,
                dead_time: bool = False) -> np.ndarray:
    """Simulator derivative; equals :func:`control_deriv` when thrust states are off."""
    u = np.array(u.vector() if isinstance(u, Input) else u, float)
    _check_quat(plant.x)
    d = d or Disturbance()
    if plant.thrust_model and dead_time:
        n = params.rotor_count
        u[:n] = delayed_command(plant, u[:n], params, now)
    return _dynamics(params, True, plant.thrust_model).deriv(plant.x, u, d.force, d.torque)


# -- integration -------------------------------------------------------------

def rk4_step(x, u, h: float, deriv: Callable, normalize: bool = True) -> np.ndarray:
    """One classic RK4 step of ``deriv(x, u)``; renormalizes the quaternion."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, float)
    k1 = deriv(x, u)
    k2 = deriv(x + 0.5 * h * k1, u)
    k3 = deriv(x + 0.5 * h * k2, u)
    k4 = deriv(x + h * k3, u)
    out = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after RK4 step")
    if normalize and out.shape[-1] >= QUAT.stop:
        out = normalize_quat(out)
    return out
