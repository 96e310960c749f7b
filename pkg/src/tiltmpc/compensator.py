"""Z-axis integral term feeding the disturbance-force parameter of the NMPC.

Trapezoidal integration with back-calculation anti-windup.  The output is a
world-frame Z force that the prediction model treats as a disturbance, which
the optimizer then cancels.  The caller therefore passes ``z_hat - z_ref``: a
robot sagging below its reference produces a negative (downward) model force
and the controller answers with more thrust.
"""
from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class ITermState:
    gain: float = 5.0          # k_I, N/(m s)
    sample_time: float = 0.01  # s
    u_min: float = -5.0        # N
    u_max: float = 5.0
    acc: float = 0.0           # accumulated integral, m s
    e_prev: float = 0.0        # m

    def __post_init__(self):
        if self.u_min > self.u_max:
            raise ValueError("u_min must not exceed u_max")
        if self.gain <= 0 or self.sample_time <= 0:
            raise ValueError("gain and sample time must be positive")

    @property
    def output(self) -> float:
        return self.gain * self.acc


def iterm_update(state: ITermState, e: float) -> tuple[float, ITermState]:
    """Advance the integrator one sample; returns ``(f_dz, new_state)``."""
    e = float(e)
    if e != e or e in (float("inf"), float("-inf")):
        raise ValueError("error must be finite")
    acc = state.acc + 0.5 * state.sample_time * (state.e_prev + e)
    raw = state.gain * acc
    u = min(max(raw, state.u_min), state.u_max)
    # back-calculation keeps gain * acc equal to the clamped output
    acc += (u - raw) / state.gain
    return u, replace(state, acc=acc, e_prev=e)


def iterm_reset(state: ITermState) -> ITermState:
    return replace(state, acc=0.0, e_prev=0.0)
