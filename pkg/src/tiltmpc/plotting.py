"""Figures for run logs, ablations and actuator fits (written to files, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import QUAT, quat_to_rpy  # noqa: E402
from .sim import RunLog, wrap_deg  # noqa: E402


def plot_tracking(log: RunLog, path) -> Path:
    """Position and RPY attitude against their references."""
    path = Path(path)
    rpy = np.degrees(quat_to_rpy(log.x[:, QUAT]))
    rpy_r = np.degrees(quat_to_rpy(log.ref_q))
    # unwrap yaw around the reference so the curve does not jump at +-180
    rpy = rpy_r + wrap_deg(rpy - rpy_r)
    fig, axes = plt.subplots(2, 3, figsize=(12, 6), sharex=True)
    for i, name in enumerate("xyz"):
        ax = axes[0, i]
        ax.plot(log.t, log.x[:, i], label="actual")
        ax.plot(log.t, log.ref_p[:, i], "--", label="reference")
        ax.set_ylabel(f"p_{name} [m]")
    for i, name in enumerate(("roll", "pitch", "yaw")):
        ax = axes[1, i]
        ax.plot(log.t, rpy[:, i])
        ax.plot(log.t, rpy_r[:, i], "--")
        ax.set_ylabel(f"{name} [deg]")
        ax.set_xlabel("t [s]")
    axes[0, 0].legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_commands(log: RunLog, path) -> Path:
    """Thrust and servo commands at the controller ticks."""
    path = Path(path)
    n = log.rotor_count
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    for i in range(n):
        a1.step(log.tick_t, log.tick_u[:, i], where="post", label=f"f_c{i + 1}")
        a2.step(log.tick_t, np.degrees(log.tick_u[:, n + i]), where="post", label=f"alpha_c{i + 1}")
    a1.set_ylabel("thrust [N]")
    a2.set_ylabel("servo [deg]")
    a2.set_xlabel("t [s]")
    a1.legend(loc="best", ncol=n)
    a2.legend(loc="best", ncol=n)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_ablation(logs: dict, path) -> Path:
    """Servo commands of each prediction-model variant, one row per variant."""
    path = Path(path)
    fig, axes = plt.subplots(len(logs), 1, figsize=(9, 2.6 * len(logs)), sharex=True, squeeze=False)
    for ax, (name, log) in zip(axes[:, 0], logs.items()):
        n = log.rotor_count
        for i in range(n):
            ax.step(log.tick_t, np.degrees(log.tick_u[:, n + i]), where="post")
        ax.set_title(f"{name} ({log.status})", fontsize=10)
        ax.set_ylabel("alpha_c [deg]")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_step_fit(t, command, response, model, path, title: str = "") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(t, command, ":", label="command")
    ax.plot(t, response, label="measured")
    ax.plot(t, model, "--", label="first-order model")
    ax.set_xlabel("t [s]")
    ax.set_title(title, fontsize=10)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
