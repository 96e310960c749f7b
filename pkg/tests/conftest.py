import dataclasses
import math

import numpy as np
import pytest

from tiltmpc.alloc import build_allocation
from tiltmpc.model import RobotParams


@pytest.fixture(scope="session")
def params():
    return RobotParams()


@pytest.fixture(scope="session")
def amap(params):
    return build_allocation(params)


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_state(rng, params, n_extra=0, attitude=True):
    """Random 17-dim state (plus ``n_extra`` trailing entries) with a unit quaternion."""
    n = params.rotor_count
    x = np.empty(13 + n + n_extra)
    x[0:3] = rng.uniform(-1, 1, 3)
    x[3:6] = rng.uniform(-1, 1, 3)
    x[6:10] = random_unit_quat(rng) if attitude else [1, 0, 0, 0]
    x[10:13] = rng.uniform(-2, 2, 3)
    x[13:13 + n] = rng.uniform(-1.2, 1.2, n)
    if n_extra:
        x[13 + n:] = rng.uniform(2, 12, n_extra)
    return x


def random_input(rng, params):
    n = params.rotor_count
    return np.r_[rng.uniform(2, 12, n), rng.uniform(-1.2, 1.2, n)]


def deep_equal(a, b) -> bool:
    """Structural equality for dataclasses holding numpy arrays."""
    if dataclasses.is_dataclass(a) and dataclasses.is_dataclass(b):
        if type(a) is not type(b):
            return False
        return all(deep_equal(getattr(a, f.name), getattr(b, f.name)) for f in dataclasses.fields(a))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)):
        return len(a) == len(b) and all(deep_equal(x, y) for x, y in zip(a, b))
    if callable(a) and callable(b):
        # trajectory profiles: compare their samples
        t = np.linspace(0.0, 10.0, 7)
        return all(np.array_equal(x, y) for x, y in zip(a(t), b(t)))
    return a == b


# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
