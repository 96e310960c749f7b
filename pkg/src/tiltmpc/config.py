"""Scenario configuration files: sectioned ``key = value`` text.

Sections are ``[robot]``, ``[nmpc]``, ``[sim]`` and ``[scenario]``.  Unknown
sections or keys are errors.  Angles are given in degrees and converted to
radians when the scenario is built.  Lists are comma separated; ``#`` starts a
comment.
"""
from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .compensator import ITermState
from .model import RobotParams, rpy_to_quat
from .nmpc import OcpConfig, OcpWeights
from .refgen import PoseTarget
from .sim import (VARIANTS, DisturbancePulse, NoiseConfig, Scenario, SetpointSequence, figure8_scenario,
                  setpoints_scenario, step_pose_scenario, takeoff_scenario)


class ConfigError(ValueError):
    pass


# key -> (type, default, unit)
SCHEMA: dict[str, dict[str, tuple[str, object, str]]] = {
    "robot": {
        "mass": ("float", 2.773, "kg"),
        "inertia": ("floats", (0.0417, 0.0395, 0.0707), "kg m^2, diagonal xx, yy, zz"),
        "gravity": ("float", 9.81, "m/s^2"),
        "arm_length": ("float", 0.2, "m"),
        "arm_azimuth_deg": ("floats", (45.0, 135.0, 225.0, 315.0), "deg"),
        "spin_direction": ("ints", (-1, 1, -1, 1), "+1 / -1"),
        "thrust_coeff": ("float", 1.5e-5, "N s^2"),
        "torque_ratio": ("float", 0.0153, "m"),
        "thrust_min": ("float", 0.0, "N"),
        "thrust_max": ("float", 30.0, "N"),
        "servo_min_deg": ("float", -90.0, "deg"),
        "servo_max_deg": ("float", 90.0, "deg"),
        "t_servo": ("float", 0.0859, "s"),
        "t_thrust": ("float", 0.0942, "s"),
        "t_dead": ("float", 0.35, "s"),
    },
    "nmpc": {
        "horizon": ("int", 20, "stages"),
        "t_integ": ("float", 0.1, "s"),
        "substeps": ("int", 2, "RK4 steps per shooting interval"),
        "v_limit": ("float", 1.0, "m/s"),
        "w_limit": ("float", 6.0, "rad/s"),
        "soft_weight": ("float", 1e4, "-"),
        "qp_tol": ("float", 1e-8, "-"),
        "qp_max_iter": ("int", 200, "-"),
        "q_pos": ("floats", (300.0, 300.0, 400.0), "-"),
        "q_vel": ("floats", (10.0, 10.0, 10.0), "-"),
        "q_att": ("floats", (300.0, 300.0, 600.0), "-"),
        "q_rate": ("floats", (5.0, 5.0, 5.0), "-"),
        "q_servo": ("float", 2.0, "-"),
        "q_thrust": ("float", 2.0, "-"),
        "r_thrust": ("float", 2.0, "-"),
        "r_servo": ("float", 250.0, "-"),
        "terminal_scale": ("float", 1.0, "Q_N = terminal_scale * Q"),
    },
    "sim": {
        "plant_dt": ("float", 0.005, "s"),
        "control_dt": ("float", 0.01, "s"),
        "plant_thrust": ("str", "auto", "auto | on | off, first-order thrust states in the plant"),
        "dead_time": ("bool", False, "spin-up dead time in the plant"),
        "noise": ("bool", False, "measurement noise"),
        "sigma_p": ("float", 0.002, "m"),
        "sigma_v": ("float", 0.005, "m/s"),
        "sigma_q_mrad": ("float", 1.0, "mrad, tangent space"),
        "sigma_w": ("float", 0.01, "rad/s"),
        "sigma_alpha_mrad": ("float", 1.0, "mrad"),
        "k_i": ("float", 5.0, "N/(m s)"),
        "f_d_limit": ("float", 5.0, "N"),
        "z_bias": ("float", 0.0, "N, constant world Z force on the plant"),
        "crash_distance": ("float", 5.0, "m"),
        "warm_shift": ("float", 1.0, "shooting intervals per tick"),
        "seed": ("int", 0, "-"),
    },
    "scenario": {
        "duration": ("float", 0.0, "s, 0 selects the scenario default"),
        "variant": ("str", "servo_only", "no_servo_no_thrust | servo_only | servo_and_thrust"),
        "integral": ("str", "auto", "auto | on | off"),
        "step_position": ("floats", (0.3, 0.6, 1.0), "m"),
        "step_rpy_deg": ("floats", (30.0, 60.0, 90.0), "deg"),
        "step_time": ("float", 2.0, "s"),
        "hover_position": ("floats", (0.0, 0.0, 0.6), "m, takeoff target"),
        "period_1x": ("float", 20.0, "s"),
        "disturbances": ("str", "", "start, duration, fx, fy, fz, tx, ty, tz; ... (s, N, N m)"),
    },
}


def default_config() -> dict:
    return {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "floats":
        return tuple(float(p) for p in text.split(",") if p.strip())
    if kind == "ints":
        return tuple(int(p) for p in text.split(",") if p.strip())
    return text


def parse_config(text: str, source: str = "<config>") -> dict:
    cfg = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of a section")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        kind = SCHEMA[section][key][0]
        try:
            cfg[section][key] = _parse_value(kind, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path))


def _format(kind: str, value) -> str:
    if kind in ("floats", "ints"):
        return ", ".join(repr(v) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "str":
        return str(value)
    return repr(value)


def dump_config(cfg: dict) -> str:
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (kind, _, unit) in keys.items():
            lines.append(f"{key} = {_format(kind, cfg[sec][key])}  # {unit}")
        lines.append("")
    return "\n".join(lines)


# -- scenario construction -----------------------------------------------------

def robot_params(cfg: dict) -> RobotParams:
    r = cfg["robot"]
    try:
        return RobotParams(
            mass=r["mass"], inertia=tuple(r["inertia"]), gravity=r["gravity"], arm_length=r["arm_length"],
            arm_azimuth=tuple(math.radians(a) for a in r["arm_azimuth_deg"]),
            spin_direction=tuple(r["spin_direction"]), thrust_coeff=r["thrust_coeff"],
            torque_ratio=r["torque_ratio"], thrust_min=r["thrust_min"], thrust_max=r["thrust_max"],
            servo_min=math.radians(r["servo_min_deg"]), servo_max=math.radians(r["servo_max_deg"]),
            t_servo=r["t_servo"], t_thrust=r["t_thrust"], t_dead=r["t_dead"])
    except ValueError as exc:
        raise ConfigError(f"[robot]: {exc}") from None


def ocp_settings(cfg: dict) -> tuple[OcpConfig, OcpWeights]:
    n = cfg["nmpc"]
    variant = cfg["scenario"]["variant"]
    if variant not in VARIANTS:
        raise ConfigError(f"[scenario]: unknown variant {variant!r}")
    try:
        ocp = OcpConfig(horizon=n["horizon"], t_integ=n["t_integ"], substeps=n["substeps"],
                        v_limit=n["v_limit"], w_limit=n["w_limit"], soft_weight=n["soft_weight"],
                        qp_tol=n["qp_tol"], qp_max_iter=n["qp_max_iter"], **VARIANTS[variant])
        w = OcpWeights(pos=tuple(n["q_pos"]), vel=tuple(n["q_vel"]), att=tuple(n["q_att"]),
                       rate=tuple(n["q_rate"]), servo=n["q_servo"], thrust_state=n["q_thrust"],
                       r_thrust=n["r_thrust"], r_servo=n["r_servo"], terminal_scale=n["terminal_scale"])
    except ValueError as exc:
        raise ConfigError(f"[nmpc]: {exc}") from None
    for key in ("q_pos", "q_vel", "q_att", "q_rate"):
        if len(n[key]) != 3:
            raise ConfigError(f"[nmpc]: {key} needs three entries")
    return ocp, w


def _disturbances(text: str) -> tuple[DisturbancePulse, ...]:
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        vals = [float(v) for v in chunk.split(",")]
        if len(vals) != 8:
            raise ConfigError("[scenario]: each disturbance needs start, duration, fx, fy, fz, tx, ty, tz")
        out.append(DisturbancePulse(vals[0], vals[1], tuple(vals[2:5]), tuple(vals[5:8])))
    return tuple(out)


KINDS = ("hover", "step_pose", "setpoints", "traj")


def build_scenario(cfg: dict, kind: str, speed: str = "1x", seed: int | None = None,
                   duration: float | None = None) -> Scenario:
    """Scenario for one CLI experiment; ``duration`` and ``seed`` override the file."""
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}")
    params = robot_params(cfg)
    ocp, weights = ocp_settings(cfg)
    s, sc_cfg = cfg["sim"], cfg["scenario"]
    noise = None
    if s["noise"]:
        noise = NoiseConfig(s["sigma_p"], s["sigma_v"], s["sigma_q_mrad"] * 1e-3, s["sigma_w"],
                            s["sigma_alpha_mrad"] * 1e-3)
    common = dict(params=params, ocp=ocp, weights=weights, noise=noise, plant_dt=s["plant_dt"],
                  control_dt=s["control_dt"], seed=s["seed"] if seed is None else seed,
                  z_bias=s["z_bias"], crash_distance=s["crash_distance"], warm_shift=s["warm_shift"],
                  dead_time=s["dead_time"])
    if s["plant_thrust"] not in ("auto", "on", "off"):
        raise ConfigError("[sim]: plant_thrust must be auto, on or off")
    if ocp.thrust_model or s["plant_thrust"] == "on":
        common["plant_thrust"] = True
    elif s["plant_thrust"] == "off":
        common["plant_thrust"] = False
    dist = _disturbances(sc_cfg["disturbances"])
    if dist:
        common["disturbances"] = dist
    integral = sc_cfg["integral"]
    if integral not in ("auto", "on", "off"):
        raise ConfigError("[scenario]: integral must be auto, on or off")
    lim = s["f_d_limit"]
    iterm = ITermState(gain=s["k_i"], sample_time=s["control_dt"], u_min=-lim, u_max=lim)
    if integral == "on":
        common["integral"] = iterm
    elif integral == "off":
        common["integral"] = None
    dur = duration if duration else (sc_cfg["duration"] or None)
    if dur:
        common["duration"] = dur
    try:
        if kind == "hover":
            if integral == "auto":
                common["integral"] = iterm
            return takeoff_scenario(sc_cfg["hover_position"], **common)
        if kind == "step_pose":
            p = np.asarray(sc_cfg["step_position"], float)
            rpy = np.radians(sc_cfg["step_rpy_deg"])
            seq = SetpointSequence(((0.0, PoseTarget(p, np.array([1.0, 0.0, 0.0, 0.0]))),
                                    (sc_cfg["step_time"], PoseTarget(p, rpy_to_quat(*rpy)))))
            sc = step_pose_scenario(**common)
            return replace(sc, reference=seq)
        if kind == "setpoints":
            return setpoints_scenario(**common)
        if speed not in ("1x", "2x"):
            raise ConfigError(f"speed must be 1x or 2x, got {speed!r}")
        period = sc_cfg["period_1x"] / (1 if speed == "1x" else 2)
        return figure8_scenario(period, **common)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
