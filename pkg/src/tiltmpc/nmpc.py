"""Multiple-shooting NMPC solved by one Gauss-Newton SQP iteration per tick.

The optimal control problem is a nonlinear least-squares problem over
``N`` shooting intervals.  Each call to :meth:`RtiSolver.solve` linearises
the dynamics and residuals around the warm start, condenses the states out
and solves the resulting box-constrained QP in the input increments.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .model import (N_RIGID, QUAT, Dynamics, RobotParams, normalize_quat, quat_conj,
                    quat_mul, quat_right_matrix)
from .qp import projected_gradient_norm, solve_box_qp
from .refgen import ReferenceWindow


@dataclass(frozen=True)
class OcpWeights:
    pos: tuple[float, float, float] = (300.0, 300.0, 400.0)
    vel: tuple[float, float, float] = (10.0, 10.0, 10.0)
    att: tuple[float, float, float] = (300.0, 300.0, 600.0)
    rate: tuple[float, float, float] = (5.0, 5.0, 5.0)
    servo: float = 2.0
    thrust_state: float = 2.0
    r_thrust: float = 2.0
    r_servo: float = 250.0
    terminal_scale: float = 1.0  # Q_N = terminal_scale * Q

    def __post_init__(self):
        blocks = [self.pos, self.vel, self.att, self.rate, (self.servo,), (self.r_thrust,), (self.r_servo,)]
        for b in blocks:
            if min(b) < 0 or max(b) <= 0:
                raise ValueError("weights must be >= 0 with a positive entry per block")
        if self.thrust_state < 0 or self.terminal_scale < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class OcpConfig:
    horizon: int = 20
    t_integ: float = 0.1
    substeps: int = 2
    v_limit: float = 1.0
    w_limit: float = 6.0
    soft_weight: float = 1e4
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    servo_model: bool = True
    thrust_model: bool = False
    thrust_input_error: str = "state"  # "state": f_c - f, "reference": f_c - f_r
    u_min: tuple[float, ...] | None = None  # None: actuator limits from RobotParams
    u_max: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.t_integ <= 0 or self.substeps < 1:
            raise ValueError("need horizon >= 1, t_integ > 0, substeps >= 1")
        if self.v_limit < 0 or self.w_limit < 0 or self.soft_weight < 0:
            raise ValueError("state limits and soft weight must be non-negative")
        if self.u_min is not None and self.u_max is not None and np.any(np.greater(self.u_min, self.u_max)):
            raise ValueError("u_min must not exceed u_max")


@dataclass
class WarmStart:
    x: np.ndarray  # (N+1, nx) in the prediction-model layout
    u: np.ndarray  # (N, nu)
    active: np.ndarray | None = None  # QP working set guess, (N*nu,)


@dataclass
class SolveStats:
    qp_iters: int
    kkt_residual: float
    cost: float
    solve_time_ms: float


@dataclass
class SolveResult:
    u_now: np.ndarray
    x_pred: np.ndarray
    u_pred: np.ndarray
    warm: WarmStart
    stats: SolveStats
    status: str  # "ok", "qp_max_iter" or "diverged"
    qp_objective: float = 0.0
    extra: dict = field(default_factory=dict)


def rk4_sensitivities(dyn: Dynamics, x, u, h: float, f_ext=None, substeps: int = 1):
    """Discrete RK4 map and its exact Jacobians, batched over leading dims.

    Quaternion renormalisation is not part of this map.
    """
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    nx = dyn.nx
    eye = np.eye(nx)
    dt = h / substeps
    Ax = np.broadcast_to(eye, x.shape[:-1] + (nx, nx)).copy()
    Bu = np.zeros(x.shape[:-1] + (nx, dyn.nu))
    for _ in range(substeps):
        k1, a1, b1 = dyn.jac(x, u, f_ext)
        k2, a2, b2 = dyn.jac(x + 0.5 * dt * k1, u, f_ext)
        d2x = a2 @ (eye + 0.5 * dt * a1)
        d2u = a2 @ (0.5 * dt * b1) + b2
        k3, a3, b3 = dyn.jac(x + 0.5 * dt * k2, u, f_ext)
        d3x = a3 @ (eye + 0.5 * dt * d2x)
        d3u = a3 @ (0.5 * dt * d2u) + b3
        k4, a4, b4 = dyn.jac(x + dt * k3, u, f_ext)
        d4x = a4 @ (eye + dt * d3x)
        d4u = a4 @ (dt * d3u) + b4
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        step_x = eye + dt / 6.0 * (a1 + 2 * d2x + 2 * d3x + d4x)
        step_u = dt / 6.0 * (b1 + 2 * d2u + 2 * d3u + d4u)
        Bu = step_x @ Bu + step_u
        Ax = step_x @ Ax
    return x, Ax, Bu


def rk4_map(dyn: Dynamics, x, u, h: float, f_ext=None, substeps: int = 1):
    x = np.asarray(x, float)
    dt = h / substeps
    for _ in range(substeps):
        k1 = dyn.deriv(x, u, f_ext)
        k2 = dyn.deriv(x + 0.5 * dt * k1, u, f_ext)
        k3 = dyn.deriv(x + 0.5 * dt * k2, u, f_ext)
        k4 = dyn.deriv(x + dt * k3, u, f_ext)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


class RtiSolver:
    """Real-time-iteration NMPC for one robot and one prediction-model variant.

    Owns no mutable state between calls; warm starts are passed in and out.
    """

    def __init__(self, params: RobotParams, cfg: OcpConfig | None = None, weights: OcpWeights | None = None):
        self.params = params
        self.cfg = cfg = cfg or OcpConfig()
        self.weights = w = weights or OcpWeights()
        self.dyn = Dynamics(params, servo=cfg.servo_model, thrust=cfg.thrust_model)
        n = params.rotor_count
        self.n_rotors = n
        self.nx = self.dyn.nx
        self.nu = self.dyn.nu
        u_min = np.r_[np.full(n, params.thrust_min), np.full(n, params.servo_min)]
        u_max = np.r_[np.full(n, params.thrust_max), np.full(n, params.servo_max)]
        self.u_min = u_min if cfg.u_min is None else np.asarray(cfg.u_min, float)
        self.u_max = u_max if cfg.u_max is None else np.asarray(cfg.u_max, float)
        self._build_residual_structure(w)
        self._consts = np.array([1.0 / params.mass, params.gravity, *params.inertia,
                                 params.t_servo, params.t_thrust])
        self._lat = np.ascontiguousarray(self.dyn._lat)
        self._ver = np.ascontiguousarray(self.dyn._ver)

    def sensitivities(self, xs, us, f_ext=None):
        """RK4 shooting map and Jacobians for each stage (compiled path)."""
        fe = np.zeros(3) if f_ext is None else np.asarray(f_ext, float)
        return _kernels.rk4_sens_batch(np.ascontiguousarray(xs, dtype=float),
                                       np.ascontiguousarray(us, dtype=float), fe,
                                       self.cfg.t_integ, self.cfg.substeps, self._lat, self._ver,
                                       self._consts, self.cfg.servo_model, self.cfg.thrust_model)

    # -- residual layout ---------------------------------------------------

    def _build_residual_structure(self, w: OcpWeights) -> None:
        n, nx, nu = self.n_rotors, self.nx, self.nu
        cfg = self.cfg
        sq = np.sqrt
        # state rows: p, v, att(3), w, [alpha], [f]
        state_w = [*w.pos, *w.vel, *w.att, *w.rate]
        if cfg.servo_model:
            state_w += [w.servo] * n
        if cfg.thrust_model:
            state_w += [w.thrust_state] * n
        self.n_state_rows = ns = len(state_w)
        self.n_input_rows = nu
        self.n_soft_rows = 6
        self.ny = ny = ns + nu + 6
        self._sw_state = sq(np.array(state_w))
        servo_in = w.r_servo if cfg.servo_model else w.servo
        self._sw_input = sq(np.r_[np.full(n, w.r_thrust), np.full(n, servo_in)])
        self._sw_soft = math.sqrt(cfg.soft_weight)

        N = cfg.horizon
        jx = np.zeros((N + 1, ny, nx))
        ju = np.zeros((N + 1, ny, nu))
        # state-difference rows (everything except the attitude block maps 1:1)
        src = [0, 1, 2, 3, 4, 5, None, None, None, 10, 11, 12] + list(range(N_RIGID, nx))
        for row, col in enumerate(src):
            if col is not None:
                jx[:, row, col] = self._sw_state[row]
        ju[:N, ns + np.arange(nu), np.arange(nu)] = self._sw_input
        if cfg.servo_model:
            # servo command error alpha_c - alpha
            jx[:N, ns + n + np.arange(n), N_RIGID + np.arange(n)] = -self._sw_input[n:]
        if cfg.thrust_model and cfg.thrust_input_error == "state":
            # thrust command error f_c - f
            jx[:N, ns + np.arange(n), self.dyn.thrust_idx] = -self._sw_input[:n]
        scale = np.ones((N + 1, 1, 1))
        scale[N] = math.sqrt(w.terminal_scale)
        self._jx_const = jx
        self._ju_const = ju
        self._terminal_row_scale = scale

    def _residuals(self, xs, us, xr, ur, fr):
        """Residual vector and Jacobians per stage at the linearisation point."""
        cfg = self.cfg
        N = cfg.horizon
        n = self.n_rotors
        ns = self.n_state_rows
        r = np.zeros((N + 1, self.ny))
        jx = self._jx_const.copy()
        ju = self._ju_const

        # state errors
        dx = np.empty((N + 1, ns))
        dx[:, 0:6] = xs[:, 0:6] - xr[:, 0:6]
        qc = quat_conj(xr[:, QUAT])
        qe = quat_mul(xs[:, QUAT], qc)
        sign = np.where(qe[:, 0] < 0, -1.0, 1.0)
        dx[:, 6:9] = sign[:, None] * qe[:, 1:]
        dx[:, 9:12] = xs[:, 10:13] - xr[:, 10:13]
        col = 12
        if cfg.servo_model:
            dx[:, col:col + n] = xs[:, N_RIGID:N_RIGID + n] - xr[:, N_RIGID:N_RIGID + n]
            col += n
        if cfg.thrust_model:
            dx[:, col:col + n] = xs[:, self.dyn.thrust_idx] - fr
        r[:, :ns] = dx * self._sw_state
        mq = quat_right_matrix(qc)[:, 1:, :]
        jx[:, 6:9, QUAT] = (sign[:, None, None] * mq) * self._sw_state[6:9, None]

        # input errors (stages 0..N-1)
        du = np.empty((N, self.nu))
        if cfg.thrust_model and cfg.thrust_input_error == "state":
            du[:, :n] = us[:, :n] - xs[:N, self.dyn.thrust_idx]
        else:
            du[:, :n] = us[:, :n] - ur[:, :n]
        if cfg.servo_model:
            du[:, n:] = us[:, n:] - xs[:N, N_RIGID:N_RIGID + n]
        else:
            du[:, n:] = us[:, n:] - ur[:, n:]
        r[:N, ns:ns + self.nu] = du * self._sw_input

        # soft velocity / body-rate limits, stages 1..N
        if self._sw_soft > 0:
            lim = np.r_[np.full(3, cfg.v_limit), np.full(3, cfg.w_limit)]
            vw = np.concatenate([xs[:, 3:6], xs[:, 10:13]], axis=1)
            viol = vw - np.clip(vw, -lim, lim)
            act = np.abs(vw) >= lim
            act[0] = False
            viol[0] = 0.0
            rows = ns + self.nu
            r[:, rows:] = self._sw_soft * viol
            cols = np.r_[3, 4, 5, 10, 11, 12]
            jx[:, rows + np.arange(6), cols] = self._sw_soft * act
        r *= self._terminal_row_scale[:, :, 0]
        jx *= self._terminal_row_scale
        return r, jx, ju

    # -- mapping between full states and model states ------------------------

    def model_state(self, x_full, thrust=None) -> np.ndarray:
        """Prediction-model state from a measured state (and measured thrusts)."""
        x_full = np.asarray(x_full, float)
        n = self.n_rotors
        parts = [x_full[:N_RIGID]]
        if self.cfg.servo_model:
            parts.append(x_full[N_RIGID:N_RIGID + n])
        if self.cfg.thrust_model:
            if thrust is None:
                raise ValueError("thrust-state prediction model needs thrust feedback")
            parts.append(np.asarray(thrust, float))
        return np.concatenate(parts)

    def _reference(self, window: ReferenceWindow):
        N = self.cfg.horizon
        if window.horizon != N:
            raise ValueError(f"reference window has {window.horizon} stages, solver expects {N}")
        xr = window.x
        ur = window.u
        fr = np.vstack([ur[:, :self.n_rotors], ur[-1:, :self.n_rotors]])
        return xr, ur, fr

    def cold_start(self, x_hat, window: ReferenceWindow) -> WarmStart:
        """Measured state held over the horizon, attitude slerped to the reference."""
        N = self.cfg.horizon
        x_hat = np.asarray(x_hat, float)
        xr, ur, fr = self._reference(window)
        xs = np.tile(x_hat, (N + 1, 1))
        s = np.linspace(0.0, 1.0, N + 1)
        q0 = x_hat[QUAT]
        q1 = xr[:, QUAT]
        flip = np.where(np.sum(q1 * q0, axis=1) < 0, -1.0, 1.0)
        xs[:, QUAT] = (1 - s)[:, None] * q0 + (s * flip)[:, None] * q1
        xs = normalize_quat(xs)
        us = np.clip(ur.copy(), self.u_min, self.u_max)
        return WarmStart(xs, us, None)

    def shift(self, result: SolveResult) -> WarmStart:
        return shift_warm_start(result)

    # -- one RTI step ------------------------------------------------------

    def solve(self, x_hat, window: ReferenceWindow, warm: WarmStart, f_ext=None) -> SolveResult:
        # overflow on a blown-up linearisation is reported as status "diverged"
        with np.errstate(over="ignore", invalid="ignore"):
            return self._solve(x_hat, window, warm, f_ext)

    def _solve(self, x_hat, window: ReferenceWindow, warm: WarmStart, f_ext) -> SolveResult:
        t0 = time.perf_counter()
        cfg = self.cfg
        N, nx, nu = cfg.horizon, self.nx, self.nu
        x_hat = np.asarray(x_hat, float)
        if warm.x.shape != (N + 1, nx) or warm.u.shape != (N, nu):
            raise ValueError("warm start dimensions do not match the horizon")
        xr, ur, fr = self._reference(window)
        xs = warm.x
        us = np.clip(warm.u, self.u_min, self.u_max)
        f_ext = None if f_ext is None else np.asarray(f_ext, float)

        x_next, A, B = self.sensitivities(xs[:-1], us, f_ext)
        defects = x_next - xs[1:]
        r0, jx, ju = self._residuals(xs, us, xr, ur, fr)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(r0))):
            return self._diverged(warm, t0)

        # condense: dx_k = S_k du + s_k
        nz = N * nu
        S, s = _kernels.condense(A, B, defects, x_hat - xs[0])

        J = jx @ S
        J[:N].reshape(N, self.ny, N, nu)[np.arange(N), :, np.arange(N), :] += ju[:N]
        c_vec = r0 + np.einsum("kij,kj->ki", jx, s)
        J = J.reshape(-1, nz)
        c_vec = c_vec.reshape(-1)
        H = J.T @ J
        H[np.diag_indices_from(H)] += 1e-10
        g = J.T @ c_vec
        lb = (self.u_min - us).reshape(-1)
        ub = (self.u_max - us).reshape(-1)
        # numerical slack so the zero step stays feasible
        lb = np.minimum(lb, 0.0)
        ub = np.maximum(ub, 0.0)

        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
            return self._diverged(warm, t0)
        try:
            qp = solve_box_qp(H, g, lb, ub, active0=warm.active, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
        except np.linalg.LinAlgError:
            return self._diverged(warm, t0)

        du = qp.z
        dx = (S @ du) + s
        x_new = normalize_quat(xs + dx)
        u_new = np.clip(us + du.reshape(N, nu), self.u_min, self.u_max)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(u_new))):
            return self._diverged(warm, t0)

        kkt = max(projected_gradient_norm(H, g, np.zeros(nz), lb, ub),
                  float(np.max(np.abs(defects))), float(np.max(np.abs(s[0]))))
        cost = float(np.sum((c_vec + J @ du) ** 2))
        status = "ok" if qp.converged else "qp_max_iter"
        elapsed = (time.perf_counter() - t0) * 1e3
        warm_next = WarmStart(x_new, u_new, qp.active.copy())
        return SolveResult(u_new[0].copy(), x_new, u_new, warm_next,
                           SolveStats(qp.iterations, kkt, cost, elapsed), status, qp.objective)

    def _diverged(self, warm: WarmStart, t0: float) -> SolveResult:
        elapsed = (time.perf_counter() - t0) * 1e3
        u0 = np.clip(warm.u[0], self.u_min, self.u_max)
        return SolveResult(u0, warm.x, warm.u, warm, SolveStats(0, math.nan, math.nan, elapsed), "diverged")


def shift_warm_start(result: SolveResult, fraction: float = 1.0) -> WarmStart:
    """Advance the guess by ``fraction`` of a shooting interval.

    ``fraction=1`` drops the first stage and duplicates the last one.  Smaller
    fractions interpolate linearly between neighbouring stages, which keeps
    the guess time-consistent when the control period is shorter than the
    shooting interval.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    w = result.warm
    if fraction == 1.0:
        x = np.concatenate([w.x[1:], w.x[-1:]], axis=0)
        u = np.concatenate([w.u[1:], w.u[-1:]], axis=0)
        active = None
        if w.active is not None:
            nu = w.u.shape[1]
            active = np.concatenate([w.active[nu:], w.active[-nu:]])
        return WarmStart(x, u, active)
    x = w.x.copy()
    u = w.u.copy()
    x[:-1] += fraction * (w.x[1:] - w.x[:-1])
    u[:-1] += fraction * (w.u[1:] - w.u[:-1])
    active = None if w.active is None else w.active.copy()
    return WarmStart(normalize_quat(x), u, active)


def stage_residual(x, u, x_ref, u_ref, weights: OcpWeights, servo_model: bool = True) -> np.ndarray:
    """Weighted residual ``[sqrt(Q) * x_err, sqrt(R) * u_err]`` of one stage.

    Servo command error is ``alpha_c - alpha`` (current angle) with the servo
    model and ``alpha_c - alpha_ref`` without it.
    """
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    x_ref = np.asarray(x_ref, float)
    u_ref = np.asarray(u_ref, float)
    n = u.size // 2
    qe = quat_mul(x[QUAT], quat_conj(x_ref[QUAT]))
    att = (-1.0 if qe[0] < 0 else 1.0) * qe[1:]
    parts = [np.sqrt(weights.pos) * (x[0:3] - x_ref[0:3]),
             np.sqrt(weights.vel) * (x[3:6] - x_ref[3:6]),
             np.sqrt(weights.att) * att,
             np.sqrt(weights.rate) * (x[10:13] - x_ref[10:13])]
    if servo_model:
        alpha = x[N_RIGID:N_RIGID + n]
        parts.append(math.sqrt(weights.servo) * (alpha - x_ref[N_RIGID:N_RIGID + n]))
        servo_err = math.sqrt(weights.r_servo) * (u[n:] - alpha)
    else:
        servo_err = math.sqrt(weights.servo) * (u[n:] - u_ref[n:])
    parts.append(math.sqrt(weights.r_thrust) * (u[:n] - u_ref[:n]))
    parts.append(servo_err)
    return np.concatenate(parts)


def linearize_dynamics(x, u, f_ext, params: RobotParams, t_integ: float, substeps: int = 2):
    """Discrete next state and its sensitivities ``(x_next, A, B)`` for the servo model."""
    dyn = Dynamics(params, servo=True, thrust=False)
    x_next, A, B = rk4_sensitivities(dyn, x, u, t_integ, f_ext, substeps)
    return normalize_quat(x_next), A, B


def solve_rti(x_hat, window: ReferenceWindow, warm: WarmStart, f_ext, cfg: OcpConfig,
              weights: OcpWeights, params: RobotParams) -> SolveResult:
    return RtiSolver(params, cfg, weights).solve(x_hat, window, warm, f_ext)


def cold_start(x_hat, window: ReferenceWindow, params: RobotParams, cfg: OcpConfig | None = None) -> WarmStart:
    return RtiSolver(params, cfg).cold_start(x_hat, window)
