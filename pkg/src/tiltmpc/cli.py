"""Command-line front end: canned experiments, ablation, actuator identification.

Every experiment writes ``<out>/log.csv`` and ``<out>/metrics.json`` and
prints the metrics.  Exit status is 0 on success, 1 on configuration or I/O
errors and 2 when a run is flagged as crashed.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, build_scenario, default_config, dump_config, load_config
from .report import lag_sensitivity
from .sim import VARIANTS, ablation_compare, metrics, run_closed_loop, write_log_csv, write_timing_csv
from .sysid import (IdentificationError, StepLogSeries, fit_first_order, read_step_csv,
                    simulate_first_order, write_fit_json)

METRIC_KEYS = ("rmse_pos_x_m", "rmse_pos_y_m", "rmse_pos_z_m", "rmse_att_roll_deg", "rmse_att_pitch_deg",
               "rmse_att_yaw_deg", "overshoot_z_pct", "settle_s", "cmd_total_variation",
               "solve_time_ms_p50", "solve_time_ms_p99", "status")

EXPERIMENTS = {"hover": "hover", "step-pose": "step_pose", "setpoints": "setpoints", "traj": "traj"}


def _jsonable(v):
    if v is None or isinstance(v, str):
        return v
    v = float(v)
    return v if math.isfinite(v) else None


def write_metrics(m: dict, path) -> None:
    doc = {k: _jsonable(m.get(k)) for k in METRIC_KEYS}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _print_metrics(m: dict, out=sys.stdout) -> None:
    for k in METRIC_KEYS:
        v = m.get(k)
        text = "null" if v is None else (v if isinstance(v, str) else f"{float(v):.6g}")
        print(f"  {k:22s} {text}", file=out)


def _config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    if args.variant:
        if args.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {args.variant!r}; choose from {', '.join(VARIANTS)}")
        cfg["scenario"]["variant"] = args.variant
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_experiment(args) -> int:
    kind = EXPERIMENTS[args.command]
    cfg = _config(args)
    sc = build_scenario(cfg, kind, speed=getattr(args, "speed", "1x"), seed=args.seed, duration=args.duration)
    out = _outdir(args)
    log = run_closed_loop(sc)
    m = metrics(log, trajectory=(kind == "traj"))
    write_log_csv(log, out / "log.csv")
    write_timing_csv(log, out / "timing.csv")
    write_metrics(m, out / "metrics.json")
    if not args.no_plots:
        from .plotting import plot_commands, plot_tracking
        plot_tracking(log, out / "tracking.png")
        plot_commands(log, out / "commands.png")
    print(f"{args.command}: {len(log.t)} samples, status {log.status}")
    _print_metrics(m)
    return 2 if log.crashed else 0


def cmd_ablation(args) -> int:
    cfg = _config(args)
    sc = build_scenario(cfg, "step_pose", seed=args.seed, duration=args.duration)
    sc = replace(sc, noise=None)
    out = _outdir(args)
    rep = ablation_compare(sc)
    for name, log in rep.logs.items():
        sub = out / name
        sub.mkdir(exist_ok=True)
        write_log_csv(log, sub / "log.csv")
        write_timing_csv(log, sub / "timing.csv")
        write_metrics(rep.metrics[name], sub / "metrics.json")
    # top level mirrors the servo-integrated controller
    write_log_csv(rep.logs["servo_only"], out / "log.csv")
    write_metrics(rep.metrics["servo_only"], out / "metrics.json")
    summary = {
        "total_variation": rep.total_variation,
        "max_thrust_step": rep.max_thrust_step,
        "status": {k: v["status"] for k, v in rep.metrics.items()},
        "checks": rep.checks,
    }
    (out / "ablation.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not args.no_plots:
        from .plotting import plot_ablation
        plot_ablation(rep.logs, out / "ablation.png")
    print(rep.summary())
    # only the servo-integrated arms are expected to fly; the no-servo arm may crash
    return 2 if any(rep.logs[k].crashed for k in ("servo_only", "servo_and_thrust")) else 0


def _synthetic_step(seed: int) -> StepLogSeries:
    """Servo step to 1 rad with the configured lag plus 5 mrad of sensor noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, 1.5, 0.01)
    u = np.where(t >= 0.2, 1.0, 0.0)
    y = simulate_first_order(t, u, 0.0859, 0.0, y0=0.0) + rng.normal(0.0, 0.005, t.size)
    return StepLogSeries(t, u, y, "rad")


def cmd_sysid(args) -> int:
    out = _outdir(args)
    series = read_step_csv(args.input) if args.input else _synthetic_step(args.seed or 0)
    fit = fit_first_order(series)
    model = simulate_first_order(series.t, series.command, fit.tau, fit.dead_time, y0=series.response[0])
    np.savetxt(out / "log.csv", np.column_stack([series.t, series.command, series.response, model]),
               delimiter=",", header="time,command,response,model", comments="", fmt="%.12g")
    write_fit_json(fit, out / "fit.json")
    write_metrics({"status": "ok"}, out / "metrics.json")
    if not args.no_plots:
        from .plotting import plot_step_fit
        plot_step_fit(series.t, series.command, series.response, model, out / "fit.png",
                      f"tau = {fit.tau:.4f} s, dead time = {fit.dead_time:.3f} s, fit = {fit.fit_pct:.1f}%")
    print(f"tau        {fit.tau:.6f} s")
    print(f"dead_time  {fit.dead_time:.6f} s")
    print(f"fit        {fit.fit_pct:.2f} %")
    return 0


def cmd_lag(args) -> int:
    r = lag_sensitivity(args.servo_from, args.servo_to, args.thrust_from, args.thrust_to, args.remaining)
    print(f"servo lag  {r.servo_lag_deg:.2f} deg -> wrench term error {r.servo_error_pct:.2f} %")
    print(f"thrust lag {r.thrust_lag:.2f} N   -> wrench term error {r.thrust_error_pct:.2f} %")
    if args.out:
        out = _outdir(args)
        (out / "lag.json").write_text(json.dumps(r.__dict__, indent=2) + "\n")
    return 0


def cmd_defaults(args) -> int:
    sys.stdout.write(dump_config(default_config()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiltmpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", help="scenario config file")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the config)")
        p.add_argument("--variant", choices=tuple(VARIANTS), help="prediction-model variant")
        p.add_argument("--duration", type=float, default=None, help="run length in seconds")
        p.add_argument("--no-plots", action="store_true", help="skip the figures")

    helps = {"hover": "takeoff to a hover point, then disturbance pulses",
             "step-pose": "position step, then attitude step at t = 2 s",
             "setpoints": "three pose points held for 8 s each",
             "traj": "figure-eight pose trajectory"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        common(p)
        if name == "traj":
            p.add_argument("--speed", choices=("1x", "2x"), default="1x")
        p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("ablation", help="compare the three prediction-model variants")
    common(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("sysid", help="fit a first-order lag to a step log")
    common(p)
    p.add_argument("--input", help="CSV with time,command,response columns (synthetic data if omitted)")
    p.set_defaults(func=cmd_sysid)

    p = sub.add_parser("lag", help="wrench-term error caused by servo and thrust lag")
    p.add_argument("--servo-from", type=float, default=0.0, help="deg")
    p.add_argument("--servo-to", type=float, default=-80.0, help="deg")
    p.add_argument("--thrust-from", type=float, default=7.0, help="N")
    p.add_argument("--thrust-to", type=float, default=11.0, help="N")
    p.add_argument("--remaining", type=float, default=0.2, help="fraction of the step still to go")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lag)

    p = sub.add_parser("defaults", help="print the default config file")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IdentificationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
