"""Wrench allocation through the Moore-Penrose inverse of the virtual-input map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RobotParams, Wrench, virtual_input_columns


class AllocationError(ValueError):
    """The rotor geometry cannot produce an arbitrary body wrench."""


@dataclass(frozen=True)
class AllocationMap:
    A: np.ndarray       # (6, 2Np), columns interleaved [lateral_1, vertical_1, ...]
    A_pinv: np.ndarray  # (2Np, 6)
    params: RobotParams


@dataclass(frozen=True)
class Allocation:
    thrust: np.ndarray
    servo: np.ndarray
    saturated: bool
    degenerate: bool
    virtual: np.ndarray  # unclamped z = A^+ w


def build_allocation(params: RobotParams) -> AllocationMap:
    lateral, vertical = virtual_input_columns(params)
    n = params.rotor_count
    A = np.empty((6, 2 * n))
    A[:, 0::2] = lateral
    A[:, 1::2] = vertical
    rank = np.linalg.matrix_rank(A)
    if rank < 6:
        raise AllocationError(f"allocation matrix has rank {rank} < 6")
    A_pinv = np.linalg.pinv(A)
    A.setflags(write=False)
    A_pinv.setflags(write=False)
    return AllocationMap(A, A_pinv, params)


def allocate(amap: AllocationMap, wrench, eps: float = 1e-9) -> Allocation:
    """Per-rotor thrust and tilt angle realising ``wrench`` (body frame).

    The minimum-norm virtual input is converted with ``f = hypot(h, v)`` and
    ``alpha = atan2(h, v)``; results are clamped to the actuator limits.
    """
    w = wrench.vector() if isinstance(wrench, Wrench) else np.asarray(wrench, float)
    if not np.all(np.isfinite(w)):
        raise ValueError("wrench must be finite")
    z = amap.A_pinv @ w
    h, v = z[0::2], z[1::2]
    f = np.hypot(h, v)
    tiny = f < eps
    alpha = np.where(tiny, 0.0, np.arctan2(h, v))
    p = amap.params
    f_c = np.clip(f, p.thrust_min, p.thrust_max)
    a_c = np.clip(alpha, p.servo_min, p.servo_max)
    saturated = bool(np.any(f_c != f) or np.any(a_c != alpha))
    return Allocation(f_c, a_c, saturated, bool(np.any(tiny)), z)


def allocate_batch(amap: AllocationMap, wrenches: np.ndarray):
    """Vectorised :func:`allocate` for an (K, 6) stack; returns (f, alpha, saturated)."""
    z = np.asarray(wrenches, float) @ amap.A_pinv.T
    h, v = z[:, 0::2], z[:, 1::2]
    f = np.hypot(h, v)
    alpha = np.where(f < 1e-9, 0.0, np.arctan2(h, v))
    p = amap.params
    f_c = np.clip(f, p.thrust_min, p.thrust_max)
    a_c = np.clip(alpha, p.servo_min, p.servo_max)
    saturated = np.any(f_c != f, axis=1) | np.any(a_c != alpha, axis=1)
    return f_c, a_c, saturated
