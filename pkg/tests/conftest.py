import numpy as np
import pytest
from hypothesis import settings

from objscale.geometry import Ellipsoid, RigidPose, Rotation

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE = {}


def random_rotation(rng):
    q = rng.normal(size=4)
    return Rotation(q / np.linalg.norm(q))


def random_pose(rng, scale=1.0):
    return RigidPose(random_rotation(rng), scale * rng.normal(size=3))


def random_ellipsoid(rng, center_scale=1.0):
    return Ellipsoid(random_pose(rng, center_scale), rng.uniform(0.2, 2.0, size=3))


def surface_samples(e: Ellipsoid, n, rng):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return (d * e.semi_axes) @ e.pose.R.T + e.pose.translation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    def _record(number, name, passed, detail=""):
        ACCEPTANCE[number] = (name, bool(passed), detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}  {detail}")
