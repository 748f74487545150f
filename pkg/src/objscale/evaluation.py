"""Trajectory metrics: relative scale error, similarity alignment, ATE.

TUM trajectory files hold one pose per line,
``timestamp tx ty tz qx qy qz qw``; lines starting with ``#`` are comments.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, NoAssociations, ParseError
from .geometry import RigidPose, Rotation


@dataclass
class Trajectory:
    stamps: np.ndarray
    poses: list[RigidPose]

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(self.stamps) != len(self.poses):
            raise ValueError("stamps and poses differ in length")
        if np.any(np.diff(self.stamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self):
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: Rotation
    translation: np.ndarray
    residual: float = 0.0

    def apply(self, points):
        return self.scale * np.atleast_2d(points) @ self.rotation.matrix.T + self.translation


@dataclass
class AteResult:
    rmse: float
    errors: np.ndarray
    alignment: SimilarityTransform | None = None
    pairs: list[tuple[int, int]] = field(default_factory=list)


def umeyama_align(estimate, truth, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares {s, R, t} minimising sum ||truth_i - s R estimate_i - t||^2."""
    X = np.asarray(estimate, dtype=float).reshape(-1, 3)
    Y = np.asarray(truth, dtype=float).reshape(-1, 3)
    if X.shape != Y.shape:
        raise ValueError("point sets differ in shape")
    n = X.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"need at least 3 point pairs, got {n}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    sx = np.linalg.svd(Xc, compute_uv=False)
    if sx[0] == 0 or sx[1] <= 1e-10 * sx[0]:
        raise DegenerateGeometry("estimate positions are collinear")

    Sigma = Yc.T @ Xc / n
    U, D, Vt = np.linalg.svd(Sigma)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_x = np.sum(Xc * Xc) / n
    s = float(np.trace(np.diag(D) @ S) / var_x) if with_scale else 1.0
    t = my - s * R @ mx
    res = Y - (s * X @ R.T + t)
    return SimilarityTransform(s, Rotation.from_matrix(R), t, float(np.sum(res * res)))


def rse(estimated_scale: float, true_scale: float) -> float:
    if not true_scale > 0:
        raise ValueError("true scale must be positive")
    return abs(estimated_scale - true_scale) / true_scale


def associate_timestamps(a, b, max_dt: float = 0.02):
    """Greedy nearest-neighbour stamp matching; each stamp is used once."""
    if not max_dt > 0:
        raise ValueError("max_dt must be positive")
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        return []
    diff = np.abs(a[:, None] - b[None, :])
    ia, ib = np.nonzero(diff <= max_dt)
    order = np.lexsort((ib, ia, diff[ia, ib]))
    used_a, used_b, pairs = set(), set(), []
    for k in order:
        i, j = int(ia[k]), int(ib[k])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs


def ate_rmse(estimate: Trajectory, truth: Trajectory, align_mode: str = "none",
             max_dt: float = 0.02) -> AteResult:
    pairs = associate_timestamps(estimate.stamps, truth.stamps, max_dt)
    if not pairs:
        raise NoAssociations("no time-associated poses between the trajectories")
    P = estimate.positions[[i for i, _ in pairs]]
    G = truth.positions[[j for _, j in pairs]]
    if align_mode == "none":
        S = None
        aligned = P
    elif align_mode in ("rigid", "sim3"):
        S = umeyama_align(P, G, with_scale=align_mode == "sim3")
        aligned = S.apply(P)
    else:
        raise ValueError(f"unknown align mode {align_mode!r}")
    err = np.linalg.norm(aligned - G, axis=1)
    return AteResult(float(np.sqrt(np.mean(err * err))), err, S, pairs)


# -- TUM format ---------------------------------------------------------------------

def parse_tum(text: str, source: str = "<string>") -> Trajectory:
    stamps, poses = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.split()
        if len(fields) != 8:
            raise ParseError(f"{source}:{lineno}: expected 8 fields, got {len(fields)}")
        try:
            t, tx, ty, tz, qx, qy, qz, qw = (float(f) for f in fields)
        except ValueError:
            raise ParseError(f"{source}:{lineno}: non-numeric field in {s!r}") from None
        try:
            rot = Rotation(np.array([qw, qx, qy, qz]))
        except ValueError:
            raise ParseError(f"{source}:{lineno}: zero quaternion") from None
        stamps.append(t)
        poses.append(RigidPose(rot, [tx, ty, tz]))
    try:
        return Trajectory(np.array(stamps), poses)
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from None


def load_tum(path) -> Trajectory:
    return parse_tum(Path(path).read_text(), str(path))


def format_tum(traj: Trajectory, header: str = "timestamp tx ty tz qx qy qz qw") -> str:
    lines = [f"# {header}"]
    for t, p in zip(traj.stamps, traj.poses):
        w, x, y, z = p.rotation.quat
        vals = [t, *p.translation, x, y, z, w]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def save_tum(traj: Trajectory, path) -> None:
    Path(path).write_text(format_tum(traj))


def metrics_report(result: AteResult, mode: str) -> dict:
    out = {"mode": mode, "num_pairs": len(result.pairs), "ate_rmse": result.rmse,
           "ate_mean": float(result.errors.mean()), "ate_max": float(result.errors.max())}
    if result.alignment is not None:
        out["alignment"] = {"scale": result.alignment.scale,
                            "quat_wxyz": result.alignment.rotation.quat.tolist(),
                            "translation": result.alignment.translation.tolist()}
    return out


def report_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
