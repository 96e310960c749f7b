"""Actuator-lag sensitivity of the rotor wrench terms.

Each wrench component is a sum of terms ``c sin(alpha) f`` or ``c cos(alpha) f``.
If an actuator still has a fraction of its move left, the term computed with
the lagging value differs from the one at the target.  For a servo moving to
-80 deg the cosine term is the sensitive one; for thrust the term is linear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class LagSensitivity:
    servo_lag_deg: float
    thrust_lag: float
    servo_error_pct: float
    thrust_error_pct: float


def servo_term_error_pct(target_deg: float, lag_deg: float) -> float:
    """Relative change of ``cos(alpha)`` when alpha lags its target by ``lag_deg``."""
    c_target = math.cos(math.radians(target_deg))
    c_lagging = math.cos(math.radians(target_deg - lag_deg))
    return (c_lagging - c_target) / c_target * 100.0


def thrust_term_error_pct(target: float, lag: float) -> float:
    return ((target - lag) - target) / target * 100.0


def lag_sensitivity(servo_from_deg: float = 0.0, servo_to_deg: float = -80.0,
                    thrust_from: float = 7.0, thrust_to: float = 11.0,
                    remaining: float = 0.2) -> LagSensitivity:
    """Wrench-term errors when both actuators still have ``remaining`` of their step to go.

    The defaults are the command ranges of rotor 1 after the attitude step of
    the step-pose scenario: servo 0 to -80 deg, thrust 7 to 11 N.
    """
    servo_lag = (servo_to_deg - servo_from_deg) * remaining
    thrust_lag = (thrust_to - thrust_from) * remaining
    return LagSensitivity(servo_lag, thrust_lag,
                          servo_term_error_pct(servo_to_deg, servo_lag),
                          thrust_term_error_pct(thrust_to, thrust_lag))
