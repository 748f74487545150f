import numpy as np
import pytest
from hypothesis import given, strategies as st

from objscale.errors import DegenerateGeometry, NoAssociations, ParseError
from objscale.evaluation import (Trajectory, associate_timestamps, ate_rmse, format_tum,
                                 load_tum, parse_tum, rse, save_tum, umeyama_align)
from objscale.geometry import RigidPose, Rotation

from conftest import random_rotation


def traj(positions, stamps=None, rng=None):
    positions = np.asarray(positions, float)
    n = len(positions)
    stamps = np.arange(n) * 0.1 if stamps is None else stamps
    rots = [random_rotation(rng) if rng is not None else Rotation.identity() for _ in range(n)]
    return Trajectory(stamps, [RigidPose(r, p) for r, p in zip(rots, positions)])


def random_sim3(rng):
    return rng.uniform(0.1, 10), random_rotation(rng).matrix, rng.normal(size=3) * 5


# -- Umeyama ----------------------------------------------------------------------------

def test_umeyama_identity_and_scale(rng):
    X = rng.normal(size=(20, 3))
    S = umeyama_align(X, X)
    assert S.scale == pytest.approx(1) and np.allclose(S.rotation.matrix, np.eye(3))
    assert np.allclose(S.translation, 0, atol=1e-12)
    S = umeyama_align(X - X.mean(0), 2 * (X - X.mean(0)))
    assert S.scale == pytest.approx(2) and np.allclose(S.rotation.matrix, np.eye(3))
    assert np.allclose(S.translation, 0, atol=1e-12)


def test_umeyama_round_trip(rng):
    for _ in range(100):
        s, R, t = random_sim3(rng)
        X = rng.normal(size=(int(rng.integers(3, 50)), 3)) * 3
        S = umeyama_align(X, s * X @ R.T + t)
        assert abs(S.scale - s) < 1e-9 * max(1, s)
        assert np.allclose(S.rotation.matrix, R, atol=1e-9)
        assert np.allclose(S.translation, t, atol=1e-9)
        assert S.residual < 1e-18 * max(1, s * s)


def test_umeyama_reflection_handled(rng):
    X = rng.normal(size=(10, 3))
    Y = X * [1, 1, -1]
    S = umeyama_align(X, Y)
    assert np.linalg.det(S.rotation.matrix) == pytest.approx(1.0)


def test_umeyama_degenerate():
    line = np.outer(np.arange(6.0), [1, 2, 3])
    with pytest.raises(DegenerateGeometry):
        umeyama_align(line, line * 2)
    with pytest.raises(DegenerateGeometry):
        umeyama_align(np.eye(3)[:2], np.eye(3)[:2])
    with pytest.raises(DegenerateGeometry):
        umeyama_align(np.ones((5, 3)), np.ones((5, 3)))


def test_umeyama_optimality(rng):
    X = rng.normal(size=(30, 3))
    s, R, t = random_sim3(rng)
    Y = s * X @ R.T + t + rng.normal(scale=0.3, size=X.shape)
    best = umeyama_align(X, Y)
    assert best.residual == pytest.approx(np.sum((Y - best.apply(X)) ** 2))
    for _ in range(1000):
        s2 = best.scale * np.exp(rng.normal(scale=0.05))
        R2 = random_rotation(rng).matrix if rng.random() < 0.5 else \
            Rotation.from_rotvec(rng.normal(scale=0.05, size=3)).matrix @ best.rotation.matrix
        t2 = best.translation + rng.normal(scale=0.1, size=3)
        assert best.residual <= np.sum((Y - (s2 * X @ R2.T + t2)) ** 2) + 1e-12


# -- rse ---------------------------------------------------------------------------------

def test_rse_examples():
    assert rse(1.05, 1.0) == pytest.approx(0.05)
    assert rse(2.37, 2.37) == 0
    assert rse(0.9, 1.2) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        rse(1.0, 0.0)


# -- association -------------------------------------------------------------------------

def test_association():
    a = np.arange(10) * 0.1
    assert associate_timestamps(a, a) == [(i, i) for i in range(10)]
    assert associate_timestamps(a, a + 100) == []
    assert associate_timestamps(a, a + 0.01, max_dt=0.02) == [(i, i) for i in range(10)]
    with pytest.raises(ValueError):
        associate_timestamps(a, a, max_dt=0)


def test_association_one_to_one():
    pairs = associate_timestamps([0.0, 0.01], [0.005], max_dt=0.02)
    assert pairs == [(0, 0)]  # tie broken towards the lower index


@given(st.lists(st.floats(0, 100), max_size=30, unique=True),
       st.lists(st.floats(0, 100), max_size=30, unique=True), st.floats(0.001, 5))
def test_association_properties(a, b, dt):
    pairs = associate_timestamps(a, b, dt)
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    assert all(abs(a[i] - b[j]) <= dt for i, j in pairs)


# -- ATE ------------------------------------------------------------------------------------

P = np.array([[0, 0, 0], [1, 0, 0], [2, 1, 0], [3, 1, 1], [4, 3, 1]], float)


def test_ate_identical(rng):
    t = traj(P, rng=rng)
    for mode in ("none", "rigid", "sim3"):
        assert ate_rmse(t, t, mode).rmse == pytest.approx(0, abs=1e-12)


def test_ate_shift():
    assert ate_rmse(traj(P), traj(P + [1, 0, 0]), "none").rmse == pytest.approx(1)
    assert ate_rmse(traj(P), traj(P + [1, 0, 0]), "rigid").rmse == pytest.approx(0, abs=1e-12)


def test_ate_half_scale():
    expected = np.sqrt(np.mean(np.sum(P**2, axis=1))) / 2
    assert ate_rmse(traj(P / 2), traj(P), "none").rmse == pytest.approx(expected)
    assert ate_rmse(traj(P / 2), traj(P), "sim3").rmse == pytest.approx(0, abs=1e-12)
    assert ate_rmse(traj(P / 2), traj(P), "rigid").rmse > 0


def test_ate_symmetric_none(rng):
    a, b = traj(rng.normal(size=(8, 3))), traj(rng.normal(size=(8, 3)))
    assert ate_rmse(a, b).rmse == pytest.approx(ate_rmse(b, a).rmse)


def test_ate_errors():
    with pytest.raises(NoAssociations):
        ate_rmse(traj(P), traj(P, stamps=np.arange(5) + 100.0))
    with pytest.raises(ValueError):
        ate_rmse(traj(P), traj(P), "affine")


# -- TUM files ---------------------------------------------------------------------------------------

def test_tum_identity_line():
    t = parse_tum("0.0 0 0 0 0 0 0 1\n")
    assert t.stamps[0] == 0 and np.allclose(t.poses[0].matrix, np.eye(4))


def test_tum_normalizes_and_skips_comments():
    t = parse_tum("# header\n\n1.0 1 2 3 0 0 0 2\n")
    assert np.allclose(t.poses[0].rotation.quat, [1, 0, 0, 0])
    assert np.allclose(t.positions, [[1, 2, 3]])


def test_tum_round_trip(tmp_path, rng):
    t = traj(rng.normal(size=(12, 3)), stamps=np.cumsum(rng.uniform(0.01, 1, 12)), rng=rng)
    path = tmp_path / "t.txt"
    save_tum(t, path)
    back = load_tum(path)
    assert np.allclose(back.stamps, t.stamps, atol=1e-9)
    for a, b in zip(back.poses, t.poses):
        assert np.allclose(a.matrix, b.matrix, atol=1e-9)
    assert format_tum(back) == path.read_text()


@pytest.mark.parametrize("text, match", [
    ("0 0 0 0 0 0 0 1\n1 x 0 0 0 0 0 1\n", ":2:"),
    ("0 0 0 0 0 0 1\n", ":1:"),
    ("0 0 0 0 0 0 0 0\n", "zero quaternion"),
    ("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n", "increasing"),
])
def test_tum_parse_errors(text, match):
    with pytest.raises(ParseError, match=match):
        parse_tum(text)
