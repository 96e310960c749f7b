"""Actuator identification: first-order lag with dead time, quadratic rotor map.

The first-order model has unit DC gain, ``tau dy/dt = u(t - d) - y`` with a
zero-order-held command.  Fitting is prediction-error minimisation of the
one-step-ahead predictor: for a fixed dead time the pole follows in closed
form, and the dead time is scanned on a 1 ms grid then refined by golden
section.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar


class IdentificationError(ValueError):
    """The data do not determine the requested model."""


@dataclass(frozen=True)
class StepLogSeries:
    t: np.ndarray
    command: np.ndarray
    response: np.ndarray
    units: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, float)
        if t.ndim != 1 or t.size < 10:
            raise ValueError("a step log needs at least 10 samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.shape(self.command) != t.shape or np.shape(self.response) != t.shape:
            raise ValueError("command and response must match the timestamps")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "command", np.asarray(self.command, float))
        object.__setattr__(self, "response", np.asarray(self.response, float))


@dataclass(frozen=True)
class FirstOrderFit:
    tau: float
    dead_time: float
    fit_pct: float


def _switches(t, u):
    """Times at which the held command changes, with old and new levels."""
    idx = np.flatnonzero(np.diff(u) != 0) + 1
    return t[idx], u[idx - 1], u[idx]


def _held(t, u, times):
    """Zero-order-held command evaluated at ``times`` (value before t[0] is u[0])."""
    k = np.searchsorted(t, times, side="right") - 1
    return u[np.clip(k, 0, None)]


def _one_step(t, u, y, a_dt, dt, d):
    """One-step predictions y_hat[k+1] from y[k] under pole ``a_dt`` per ``dt``."""
    t0, t1 = t[:-1], t[1:]
    u_start = _held(t, u, t0 - d)
    pred = a_dt * y[:-1] + (1 - a_dt) * u_start
    sw_t, u_old, u_new = _switches(t, u)
    for s, lo, hi in zip(sw_t + d, u_old, u_new):
        k = np.searchsorted(t1, s, side="left")  # first interval with t1 >= s
        if k < t1.size and t0[k] < s:
            # the delayed command jumps inside interval k
            pred[k] += (hi - lo) * (1 - a_dt ** ((t1[k] - s) / dt))
    return pred


def _pole_ls(t, u, y, dt, d):
    """Closed-form least-squares pole over intervals with a constant delayed command."""
    u0 = _held(t, u, t[:-1] - d)
    u1 = _held(t, u, t[1:] - d)
    sw_t, _, _ = _switches(t, u)
    clean = u0 == u1
    for s in sw_t + d:
        clean &= ~((t[:-1] < s) & (s <= t[1:]))
    z0 = (y[:-1] - u0)[clean]
    z1 = (y[1:] - u0)[clean]
    den = float(z0 @ z0)
    if den <= 0:
        return None
    return float(np.clip((z1 @ z0) / den, 1e-12, 1 - 1e-12))


def simulate_first_order(t, command, tau: float, dead_time: float = 0.0, y0: float | None = None) -> np.ndarray:
    """Exact response of the unit-gain lag to a zero-order-held, delayed command."""
    t = np.asarray(t, float)
    u = np.asarray(command, float)
    y = np.empty_like(t)
    y[0] = u[0] if y0 is None else y0
    sw_t, u_old, u_new = _switches(t, u)
    sw = sw_t + dead_time
    for k in range(t.size - 1):
        ta, tb = t[k], t[k + 1]
        level = _held(t, u, np.array([ta - dead_time]))[0]
        cur, yk = ta, y[k]
        for s, hi in zip(sw, u_new):
            if ta < s < tb:
                yk = level + (yk - level) * math.exp(-(s - cur) / tau)
                cur, level = s, hi
        y[k + 1] = level + (yk - level) * math.exp(-(tb - cur) / tau)
    return y


def fit_percentage(y, y_hat) -> float:
    """Normalised-RMSE fit, 100 for a perfect match."""
    y = np.asarray(y, float)
    den = np.linalg.norm(y - y.mean())
    return float(100.0 * (1.0 - np.linalg.norm(y - y_hat) / den))


def fit_first_order(series: StepLogSeries, max_dead_time: float | None = None) -> FirstOrderFit:
    t, u, y = series.t, series.command, series.response
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise IdentificationError("response is constant; the lag is not identifiable")
    sw_t, _, _ = _switches(t, u)
    if sw_t.size == 0:
        raise IdentificationError("no step found in the command channel")
    steps = np.diff(t)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise IdentificationError("first-order fit needs uniformly sampled data")
    if max_dead_time is None:
        max_dead_time = 0.5 * (t[-1] - sw_t[0])

    def cost(d):
        a = _pole_ls(t, u, y, dt, d)
        if a is None:
            return math.inf, None
        e = y[1:] - _one_step(t, u, y, a, dt, d)
        return float(e @ e), a

    grid = np.arange(0.0, max_dead_time + 1e-12, 1e-3)
    costs = np.array([cost(d)[0] for d in grid])
    if not np.any(np.isfinite(costs)):
        raise IdentificationError("no dead time leaves enough data to fit the pole")
    i = int(np.argmin(costs))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda d: cost(d)[0], bracket=None, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-7})
        d_best = float(res.x) if res.fun <= costs[i] else float(grid[i])
    else:
        d_best = float(grid[i])
    _, a = cost(d_best)
    tau = -dt / math.log(a)
    y_sim = simulate_first_order(t, u, tau, d_best, y0=y[0])
    return FirstOrderFit(tau, d_best, fit_percentage(y, y_sim))


def fit_quadratic_thrust(omega, thrust) -> float:
    """Least-squares ``k_t`` in ``f = k_t * omega**2``."""
    w = np.asarray(omega, float)
    f = np.asarray(thrust, float)
    if w.shape != f.shape or w.ndim != 1:
        raise ValueError("omega and thrust must be matching 1-D arrays")
    if w.size < 3:
        raise IdentificationError("need at least three samples")
    w2 = w * w
    den = float(w2 @ w2)
    if den == 0.0 or np.unique(np.abs(w)).size < 2:
        raise IdentificationError("degenerate design: rotor speeds are not distinct")
    return float(w2 @ f) / den


# -- I/O ---------------------------------------------------------------------

def read_step_csv(path, units: str = "") -> StepLogSeries:
    """Read a ``time,command,response`` CSV (header row required)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    try:
        cols = [header.index(name) for name in ("time", "command", "response")]
    except ValueError:
        raise ValueError(f"{path}: expected columns time, command, response; got {rows[0]}") from None
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            data.append([float(row[c]) for c in cols])
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: malformed row {row}") from None
    arr = np.array(data, float).reshape(-1, 3)
    return StepLogSeries(arr[:, 0], arr[:, 1], arr[:, 2], units)


def write_step_csv(series: StepLogSeries, path) -> None:
    np.savetxt(path, np.column_stack([series.t, series.command, series.response]), delimiter=",",
               header="time,command,response", comments="", fmt="%.12g")


def write_fit_json(fit: FirstOrderFit, path) -> None:
    Path(path).write_text(json.dumps({"tau_s": fit.tau, "dead_time_s": fit.dead_time,
                                      "fit_pct": fit.fit_pct}, indent=2) + "\n")
