"""Closed-loop simulator: 200 Hz plant, 100 Hz RTI controller with zero-order hold.

A run is deterministic for a given scenario and seed.  Measurement noise only
corrupts what the controller sees; the plant integrates the true state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .alloc import build_allocation
from .compensator import ITermState, iterm_reset, iterm_update
from .model import (N_RIGID, QUAT, IntegrationError, PlantState, RobotParams, State,
                    _dynamics, delayed_command, quat_mul, quat_to_rpy, rk4_step, rpy_to_quat)
from .nmpc import OcpConfig, OcpWeights, RtiSolver, shift_warm_start
from .refgen import PoseTarget, PoseTrajectory, build_figure8, setpoint_window, trajectory_window


@dataclass(frozen=True)
class DisturbancePulse:
    """Rectangular wrench pulse: world-frame force, body-frame torque."""
    start: float
    duration: float
    force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    torque: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


@dataclass(frozen=True)
class NoiseConfig:
    sigma_p: float = 0.002
    sigma_v: float = 0.005
    sigma_q: float = 0.001   # rad, tangent space
    sigma_w: float = 0.01
    sigma_alpha: float = 0.001


@dataclass(frozen=True)
class SetpointSequence:
    """Piecewise-constant pose targets; entry ``(t, target)`` holds from ``t``."""
    steps: tuple[tuple[float, PoseTarget], ...]

    def __post_init__(self):
        times = [t for t, _ in self.steps]
        if not times or times[0] > 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("setpoint times must start at or before 0 and increase")

    def at(self, t: float) -> PoseTarget:
        cur = self.steps[0][1]
        for ts, tgt in self.steps:
            if t + 1e-12 >= ts:
                cur = tgt
        return cur


@dataclass(frozen=True)
class Scenario:
    reference: SetpointSequence | PoseTrajectory
    duration: float
    params: RobotParams = field(default_factory=RobotParams)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    weights: OcpWeights = field(default_factory=OcpWeights)
    plant_thrust: bool = False
    dead_time: bool = False
    noise: NoiseConfig | None = None
    disturbances: tuple[DisturbancePulse, ...] = ()
    integral: ITermState | None = None  # None disables the Z compensator
    z_bias: float = 0.0                 # constant world Z force on the plant, N
    initial: State | None = None        # default: hover at the origin
    plant_dt: float = 0.005
    control_dt: float = 0.01
    seed: int = 0
    crash_distance: float = 5.0         # m of position error that counts as a crash
    warm_shift: float | None = 1.0      # stages to advance the warm start per tick; None: control_dt / t_integ

    def __post_init__(self):
        if self.duration <= 0 or self.plant_dt <= 0:
            raise ValueError("duration and plant step must be positive")
        ratio = self.control_dt / self.plant_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("control period must be an integer multiple of the plant step")
        if self.ocp.thrust_model and not self.plant_thrust:
            raise ValueError("a thrust-state prediction model needs a plant with thrust states")
        if isinstance(self.reference, SetpointSequence) and self.reference.steps[-1][0] > self.duration:
            raise ValueError("setpoint switch time beyond the scenario duration")


@dataclass
class RunLog:
    t: np.ndarray          # (K,)
    x: np.ndarray          # (K, nx_plant) true plant state
    u: np.ndarray          # (K, 2Np) input held over [t_k, t_k+1)
    ref_p: np.ndarray      # (K, 3)
    ref_q: np.ndarray      # (K, 4)
    f_dz: np.ndarray       # (K,)
    qp_iters: np.ndarray   # (K,) stats of the solve whose input is held
    kkt: np.ndarray
    cost: np.ndarray
    tick_t: np.ndarray     # (M,) controller tick times
    solve_ms: np.ndarray   # (M,)
    tick_u: np.ndarray     # (M, 2Np) commands issued at the ticks
    status: str = "ok"     # ok, crashed or diverged
    events: list = field(default_factory=list)
    rotor_count: int = 4

    @property
    def crashed(self) -> bool:
        return self.status != "ok"


def step_pose_scenario(**kw) -> Scenario:
    """Position step to [0.3, 0.6, 1.0] at t=0, attitude step to RPY(30, 60, 90) deg at t=2 s."""
    p = np.array([0.3, 0.6, 1.0])
    seq = SetpointSequence(((0.0, PoseTarget(p, np.array([1.0, 0.0, 0.0, 0.0]))),
                            (2.0, PoseTarget.from_rpy(p, *np.radians([30.0, 60.0, 90.0])))))
    kw.setdefault("duration", 8.0)
    kw.setdefault("plant_thrust", True)
    return Scenario(seq, **kw)


def hover_scenario(p=(0.0, 0.0, 1.0), **kw) -> Scenario:
    p = np.asarray(p, float)
    seq = SetpointSequence(((0.0, PoseTarget(p, np.array([1.0, 0.0, 0.0, 0.0]))),))
    kw.setdefault("duration", 10.0)
    kw.setdefault("initial", State.hover(kw.get("params", RobotParams()), p))
    return Scenario(seq, **kw)


def setpoints_scenario(**kw) -> Scenario:
    """Three pose points held for 8 s each, the last one returning to the start."""
    start = np.array([0.0, 0.0, 1.0])
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    seq = SetpointSequence((
        (0.0, PoseTarget.from_rpy([0.3, 0.2, 1.2], 0.5, 0.0, 0.3)),
        (8.0, PoseTarget.from_rpy([-0.3, 0.0, 1.0], 0.5, 0.5, -0.3)),
        (16.0, PoseTarget(start, ident)),
    ))
    kw.setdefault("duration", 24.0)
    kw.setdefault("initial", State.hover(kw.get("params", RobotParams()), start))
    return Scenario(seq, **kw)


def takeoff_scenario(target=(0.0, 0.0, 0.6), **kw) -> Scenario:
    """Climb from rest at the origin to ``target`` with the Z integral term, then two pokes."""
    seq = SetpointSequence(((0.0, PoseTarget(np.asarray(target, float), np.array([1.0, 0.0, 0.0, 0.0]))),))
    kw.setdefault("duration", 25.0)
    kw.setdefault("integral", ITermState())
    kw.setdefault("disturbances", (
        DisturbancePulse(14.5, 0.3, torque=(0.0, 0.0, 0.5)),
        DisturbancePulse(20.0, 0.3, force=(3.0, 0.0, 0.0)),
    ))
    return Scenario(seq, **kw)


def figure8_scenario(period: float = 20.0, **kw) -> Scenario:
    """Figure-eight pose trajectory, starting on the reference state at t = 0."""
    traj = build_figure8(period)
    params = kw.get("params", RobotParams())
    if "initial" not in kw:
        win = trajectory_window(traj, 0.0, params, build_allocation(params), 1, 0.1)
        x0 = win.x[0]
        kw["initial"] = State(x0[0:3], x0[3:6], x0[QUAT], x0[10:13], x0[N_RIGID:])
    kw.setdefault("duration", period)
    return Scenario(traj, **kw)


def _noisy(x: np.ndarray, noise: NoiseConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    y = x.copy()
    y[0:3] += rng.normal(0.0, noise.sigma_p, 3)
    y[3:6] += rng.normal(0.0, noise.sigma_v, 3)
    dth = rng.normal(0.0, noise.sigma_q, 3)
    ang = float(np.linalg.norm(dth))
    axis = dth / ang if ang > 0 else np.zeros(3)
    dq = np.r_[math.cos(ang / 2), math.sin(ang / 2) * axis]
    q = quat_mul(y[QUAT], dq)
    y[QUAT] = q / np.linalg.norm(q)
    y[10:13] += rng.normal(0.0, noise.sigma_w, 3)
    y[N_RIGID:N_RIGID + n] += rng.normal(0.0, noise.sigma_alpha, n)
    return y


def run_closed_loop(sc: Scenario) -> RunLog:
    params = sc.params
    n = params.rotor_count
    amap = build_allocation(params)
    solver = RtiSolver(params, sc.ocp, sc.weights)
    rng = np.random.default_rng(sc.seed)
    plant_dyn = _dynamics(params, True, sc.plant_thrust)
    N, dt_ocp = sc.ocp.horizon, sc.ocp.t_integ

    init = sc.initial or State.hover(params)
    plant = PlantState.from_state(init, params, sc.plant_thrust)
    if sc.plant_thrust and sc.dead_time:
        plant.x[N_RIGID + n:] = np.where(plant.x[N_RIGID + n:] > 0, plant.x[N_RIGID + n:], 0.0)

    h = sc.plant_dt
    ratio = int(round(sc.control_dt / h))
    steps = int(round(sc.duration / h))
    K = steps + 1
    nxp = plant.x.size
    t_log = np.empty(K)
    x_log = np.empty((K, nxp))
    u_log = np.empty((K, 2 * n))
    rp_log = np.empty((K, 3))
    rq_log = np.empty((K, 4))
    fdz_log = np.empty(K)
    it_log = np.empty(K, dtype=int)
    kkt_log = np.empty(K)
    cost_log = np.empty(K)
    tick_t, solve_ms, tick_u = [], [], []
    events = []

    integ = iterm_reset(sc.integral) if sc.integral is not None else None
    f_dz = 0.0
    warm = None
    u = np.r_[np.full(n, params.hover_thrust), np.zeros(n)]
    stats = (0, 0.0, 0.0)
    status = "ok"
    k_done = 0
    lo, hi = params.servo_min, params.servo_max
    shift = min(1.0, sc.control_dt / sc.ocp.t_integ) if sc.warm_shift is None else sc.warm_shift

    def plant_force(t):
        force = np.array([0.0, 0.0, sc.z_bias])
        torque = np.zeros(3)
        for d in sc.disturbances:
            if d.active(t):
                force += d.force
                torque += d.torque
        return force, torque

    for i in range(K):
        t = i * h
        if isinstance(sc.reference, SetpointSequence):
            target = sc.reference.at(t)
            ref_p, ref_q = target.p, target.q
        else:
            pr, _, _ = sc.reference.position(np.array(t))
            er, _, _ = sc.reference.rpy(np.array(t))
            ref_p, ref_q = pr, rpy_to_quat(*er)

        if i % ratio == 0 and i < steps:
            meas = plant.x if sc.noise is None else _noisy(plant.x, sc.noise, rng, n)
            thrust = plant.thrust if sc.plant_thrust else None
            if integ is not None:
                f_dz, integ = iterm_update(integ, meas[2] - ref_p[2])
            f_ext = np.array([0.0, 0.0, f_dz])
            if isinstance(sc.reference, SetpointSequence):
                window = setpoint_window(target, params, amap, N, dt_ocp, f_ext)
            else:
                window = trajectory_window(sc.reference, t, params, amap, N, dt_ocp, f_ext)
            x_hat = solver.model_state(meas, thrust if sc.ocp.thrust_model else None)
            if warm is None:
                warm = solver.cold_start(x_hat, window)
            res = solver.solve(x_hat, window, warm, f_ext)
            stats = (res.stats.qp_iters, res.stats.kkt_residual, res.stats.cost)
            tick_t.append(t)
            solve_ms.append(res.stats.solve_time_ms)
            tick_u.append(res.u_now.copy())
            if res.status == "diverged":
                status = "diverged"
            else:
                u = res.u_now
                warm = shift_warm_start(res, shift)

        t_log[i] = t
        x_log[i] = plant.x
        u_log[i] = u
        rp_log[i] = ref_p
        rq_log[i] = ref_q
        fdz_log[i] = f_dz
        it_log[i], kkt_log[i], cost_log[i] = stats
        k_done = i + 1
        if status != "ok":
            break
        if np.linalg.norm(plant.x[0:3] - ref_p) > sc.crash_distance:
            status = "crashed"
            break
        if i == steps:
            break

        force, torque = plant_force(t)
        u_apply = u
        if sc.plant_thrust and sc.dead_time:
            u_apply = u.copy()
            u_apply[:n] = delayed_command(plant, u[:n], params, t)
        try:
            x_new = rk4_step(plant.x, u_apply, h, lambda x, uu: plant_dyn.deriv(x, uu, force, torque))
        except IntegrationError:
            status = "crashed"
            break
        a = x_new[N_RIGID:N_RIGID + n]
        if np.any(a < lo) or np.any(a > hi):
            events.append((t + h, "servo_clamp"))
            x_new[N_RIGID:N_RIGID + n] = np.clip(a, lo, hi)
        if sc.plant_thrust:
            x_new[N_RIGID + n:] = np.maximum(x_new[N_RIGID + n:], 0.0)
        plant.x = x_new

    sl = slice(0, k_done)
    return RunLog(t_log[sl], x_log[sl], u_log[sl], rp_log[sl], rq_log[sl], fdz_log[sl],
                  it_log[sl], kkt_log[sl], cost_log[sl], np.array(tick_t), np.array(solve_ms),
                  np.array(tick_u).reshape(-1, 2 * n), status, events, n)


# -- metrics -----------------------------------------------------------------

def wrap_deg(a):
    """Wrap angles in degrees to (-180, 180]."""
    a = np.asarray(a, float)
    return 180.0 - np.mod(180.0 - a, 360.0)


def command_total_variation(tick_u: np.ndarray, n: int) -> float:
    """Servo-command total variation, sum over ticks of the L1 change."""
    if len(tick_u) < 2:
        return 0.0
    return float(np.sum(np.abs(np.diff(tick_u[:, n:], axis=0))))


def max_thrust_step(tick_u: np.ndarray, n: int) -> float:
    if len(tick_u) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(tick_u[:, :n], axis=0))))


def _step_response(t, z, z_ref, p, p_ref):
    """Z overshoot (%) and settling time to a 5% band after the last position switch."""
    changes = np.flatnonzero(np.any(np.abs(np.diff(p_ref, axis=0)) > 1e-12, axis=1))
    start = int(changes[-1]) + 1 if changes.size else 0
    overshoot = None
    dz = z_ref[-1] - z[start]
    if abs(dz) > 1e-6 and (changes.size or abs(z_ref[0] - z[0]) > 1e-6):
        over = (z[start:] - z_ref[-1]) * math.copysign(1.0, dz)
        overshoot = max(0.0, float(np.max(over))) / abs(dz) * 100.0
    settle = None
    size = float(np.linalg.norm(p_ref[-1] - p[start]))
    if size > 1e-6:
        err = np.linalg.norm(p[start:] - p_ref[start:], axis=1)
        out = np.flatnonzero(err > 0.05 * size)
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        settle = 0.0 if out.size == 0 else float(t[start + out[-1]] - t[start]) + dt
        if out.size and out[-1] == len(err) - 1:
            settle = None  # never settled
    return overshoot, settle


def metrics(log: RunLog, trajectory: bool = False) -> dict:
    """Summary with a stable key set; inapplicable entries are None."""
    p = log.x[:, 0:3]
    e_p = p - log.ref_p
    rpy = np.degrees(quat_to_rpy(log.x[:, QUAT]))
    rpy_r = np.degrees(quat_to_rpy(log.ref_q))
    e_a = wrap_deg(rpy - rpy_r)
    rmse_p = np.sqrt(np.mean(e_p ** 2, axis=0))
    rmse_a = np.sqrt(np.mean(e_a ** 2, axis=0))
    n = log.rotor_count
    if trajectory:
        overshoot, settle = None, None
    else:
        overshoot, settle = _step_response(log.t, p[:, 2], log.ref_p[:, 2], p, log.ref_p)
    ms = log.solve_ms
    out = {
        "rmse_pos_x_m": float(rmse_p[0]),
        "rmse_pos_y_m": float(rmse_p[1]),
        "rmse_pos_z_m": float(rmse_p[2]),
        "rmse_att_roll_deg": float(rmse_a[0]),
        "rmse_att_pitch_deg": float(rmse_a[1]),
        "rmse_att_yaw_deg": float(rmse_a[2]),
        "overshoot_z_pct": overshoot,
        "settle_s": settle,
        "cmd_total_variation": command_total_variation(log.tick_u, n),
        "solve_time_ms_p50": float(np.percentile(ms, 50)) if ms.size else None,
        "solve_time_ms_p99": float(np.percentile(ms, 99)) if ms.size else None,
        "status": log.status,
    }
    return out


# -- ablation ----------------------------------------------------------------

VARIANTS = {
    "no_servo_no_thrust": dict(servo_model=False, thrust_model=False),
    "servo_only": dict(servo_model=True, thrust_model=False),
    "servo_and_thrust": dict(servo_model=True, thrust_model=True),
}


@dataclass
class AblationReport:
    metrics: dict          # variant -> metrics dict
    total_variation: dict  # variant -> servo-command TV
    max_thrust_step: dict  # variant -> max |delta f_c| per tick
    logs: dict
    checks: dict           # named ordering claims -> bool

    def summary(self) -> str:
        lines = []
        for name, m in self.metrics.items():
            lines.append(f"{name:20s} status={m['status']:8s} TV={self.total_variation[name]:9.3f} "
                         f"max|dF|={self.max_thrust_step[name]:7.3f} "
                         f"rmse_pos=({m['rmse_pos_x_m']:.4f}, {m['rmse_pos_y_m']:.4f}, {m['rmse_pos_z_m']:.4f})")
        for k, v in self.checks.items():
            lines.append(f"{k}: {'PASS' if v else 'FAIL'}")
        return "\n".join(lines)


def _pos_rmse(m: dict) -> float:
    return math.sqrt(m["rmse_pos_x_m"] ** 2 + m["rmse_pos_y_m"] ** 2 + m["rmse_pos_z_m"] ** 2)


def ablation_compare(sc: Scenario, variants: Sequence[str] = tuple(VARIANTS)) -> AblationReport:
    """Run the prediction-model variants on one noise-free scenario (plant with thrust states)."""
    if sc.noise is not None:
        raise ValueError("the ablation is defined on a noise-free scenario")
    out_m, tv, dfmax, logs = {}, {}, {}, {}
    for name in variants:
        ocp = replace(sc.ocp, **VARIANTS[name])
        log = run_closed_loop(replace(sc, ocp=ocp, plant_thrust=True))
        logs[name] = log
        out_m[name] = metrics(log)
        tv[name] = command_total_variation(log.tick_u, log.rotor_count)
        dfmax[name] = max_thrust_step(log.tick_u, log.rotor_count)
    checks = {}
    if "no_servo_no_thrust" in tv and "servo_only" in tv:
        checks["tv_no_servo_ge_2x_servo_only"] = tv["no_servo_no_thrust"] >= 2 * tv["servo_only"]
    if "servo_and_thrust" in out_m and "servo_only" in out_m:
        checks["rmse_thrust_le_servo_only"] = (_pos_rmse(out_m["servo_and_thrust"])
                                               <= 1.05 * _pos_rmse(out_m["servo_only"]))
        checks["thrust_model_smoother"] = dfmax["servo_and_thrust"] < dfmax["servo_only"]
    return AblationReport(out_m, tv, dfmax, logs, checks)


# -- CSV ---------------------------------------------------------------------

def log_columns(log: RunLog) -> list[str]:
    n = log.rotor_count
    cols = ["t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
    cols += [f"alpha{i + 1}" for i in range(n)]
    if log.x.shape[1] > N_RIGID + n:
        cols += [f"f{i + 1}" for i in range(n)]
    cols += [f"fc{i + 1}" for i in range(n)] + [f"alphac{i + 1}" for i in range(n)]
    cols += ["ref_px", "ref_py", "ref_pz", "ref_qw", "ref_qx", "ref_qy", "ref_qz",
             "f_dz", "qp_iters", "kkt_residual", "cost"]
    return cols


def write_log_csv(log: RunLog, path) -> None:
    """Per-plant-step log; wall-clock solve times are kept out so the file is reproducible."""
    data = np.column_stack([log.t, log.x, log.u, log.ref_p, log.ref_q, log.f_dz,
                            log.qp_iters, log.kkt, log.cost])
    np.savetxt(path, data, delimiter=",", header=",".join(log_columns(log)), comments="", fmt="%.12g")


def write_timing_csv(log: RunLog, path) -> None:
    np.savetxt(path, np.column_stack([log.tick_t, log.solve_ms]), delimiter=",",
               header="t,solve_time_ms", comments="", fmt="%.6g")
