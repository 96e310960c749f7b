import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltmpc.compensator import ITermState, iterm_reset, iterm_update


def naive_clamped(errors, gain=5.0, ts=0.01, lim=5.0):
    """Trapezoidal integrator that clamps the output but keeps integrating (winds up)."""
    acc, prev, out = 0.0, 0.0, []
    for e in errors:
        acc += ts / 2 * (prev + e)
        prev = e
        out.append(min(max(gain * acc, -lim), lim))
    return out


def test_defaults_from_parameter_table():
    s = ITermState()
    assert (s.gain, s.sample_time, s.u_min, s.u_max) == (5.0, 0.01, -5.0, 5.0)


def test_zero_error_keeps_state():
    s = ITermState(acc=0.3, e_prev=0.0)
    u, s2 = iterm_update(s, 0.0)
    assert s2.acc == s.acc and u == pytest.approx(1.5)


def test_constant_error_ramp_and_saturation():
    s = ITermState()
    outputs = []
    for _ in range(1200):
        u, s = iterm_update(s, 0.1)
        outputs.append(u)
    k = np.arange(1, 1201)
    ramp = 5 * 0.1 * 0.01 * (k - 0.5)  # the first trapezoid averages with e_prev = 0
    unsat = ramp < 5.0
    np.testing.assert_allclose(np.array(outputs)[unsat], ramp[unsat], rtol=1e-9)
    first_sat = int(np.argmax(np.array(outputs) >= 5.0)) + 1
    assert abs(first_sat - 1000) <= 1
    assert max(outputs) == 5.0


def test_no_windup_lag():
    s = ITermState()
    for _ in range(3000):
        u, s = iterm_update(s, 0.1)
    assert u == 5.0
    u, s = iterm_update(s, -10.0)
    assert u < 5.0
    # the naive integrator stays saturated after the same sequence
    naive = naive_clamped([0.1] * 3000 + [-10.0])
    assert naive[-1] == 5.0


def test_invalid_state():
    with pytest.raises(ValueError):
        ITermState(u_min=1.0, u_max=0.0)
    with pytest.raises(ValueError):
        ITermState(gain=0.0)


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_rejects_non_finite_error(bad):
    with pytest.raises(ValueError):
        iterm_update(ITermState(), bad)


def test_reset():
    s = ITermState(acc=0.7, e_prev=0.2)
    r = iterm_reset(s)
    assert iterm_reset(r) == r
    assert (r.acc, r.e_prev) == (0.0, 0.0)
    assert iterm_update(r, 0.3) == iterm_update(ITermState(), 0.3)
    assert iterm_update(r, 0.0)[0] == 0.0


def test_state_is_immutable():
    s = ITermState()
    iterm_update(s, 1.0)
    assert s.acc == 0.0
    with pytest.raises(AttributeError):
        s.acc = 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=1, max_size=200))
def test_unsaturated_matches_trapezoid(errors):
    s = ITermState()
    for e in errors:
        u, s = iterm_update(s, e)
    e = np.r_[0.0, errors]
    exact = 5.0 * np.trapezoid(e, dx=0.01) if hasattr(np, "trapezoid") else 5.0 * np.trapz(e, dx=0.01)
    assert abs(exact) < 5.0  # at most 200 * 0.2 * 0.01 * 5 = 2 N
    assert u == pytest.approx(exact, abs=1e-12)


def test_fuzz_million_steps_bounds_and_consistency():
    rng = np.random.default_rng(0)
    s = ITermState()
    # mixture of slow drifts and large spikes
    errs = np.cumsum(rng.normal(scale=0.05, size=1_000_000))
    errs += rng.choice([0.0, 50.0, -50.0], size=errs.size, p=[0.98, 0.01, 0.01])
    lo = hi = 0.0
    worst = 0.0
    for e in errs:
        u, s = iterm_update(s, e)
        lo, hi = min(lo, u), max(hi, u)
        out = s.gain * s.acc
        worst = max(worst, out - s.u_max, s.u_min - out)
    assert lo >= -5.0 and hi <= 5.0
    assert lo == -5.0 and hi == 5.0  # both limits were exercised
    assert worst <= 1e-12
