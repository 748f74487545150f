"""Joint bundle adjustment over camera poses, ellipsoid objects and map points.

Three residual families enter one nonlinear least-squares problem:

* camera-object: predicted minus detected bounding box (4 px values),
* camera-point: standard pinhole reprojection error (2 px values),
* object-point: ``max(0, sqrt(p^T Q p + 1) - 1)``, pulling the ellipsoid
  around its associated points.

The problem is solved with Levenberg-Marquardt on dense normal equations.
Camera poses are perturbed on the left, ``R <- exp(dw) R, t <- t + dt``;
quadrics use the same rotation update plus additive translation and
log-semi-axis updates; points are additive.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (BehindCamera, GaugeError, NonEllipsoid, ParseError,
                     SingularNormalEquations, TooFewPoints, UnboundedConic)
from .geometry import (BBox2D, CameraIntrinsics, DualConic, DualQuadric, Ellipsoid,
                       RigidPose, Rotation, conic_bbox, fit_obb, point_quadric_error,
                       project_points, skew, so3_exp, so3_log)

log = logging.getLogger(__name__)

SIGMA_BBOX_PX = 2.0
SIGMA_PIXEL_PX = 1.0
SIGMA_OBJECT_POINT = 0.1


# -- variables and observations ---------------------------------------------------------

@dataclass(eq=False)
class QuadricParams:
    """Unconstrained 9-vector: axis-angle, translation, log semi-axes."""

    rotation_log: np.ndarray
    translation: np.ndarray
    log_semi_axes: np.ndarray

    def __post_init__(self):
        self.rotation_log = np.asarray(self.rotation_log, dtype=float).reshape(3).copy()
        self.translation = np.asarray(self.translation, dtype=float).reshape(3).copy()
        self.log_semi_axes = np.asarray(self.log_semi_axes, dtype=float).reshape(3).copy()

    @classmethod
    def from_ellipsoid(cls, e: Ellipsoid):
        return cls(e.pose.rotation.as_rotvec(), e.pose.translation, np.log(e.semi_axes))

    def to_ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(RigidPose(Rotation.from_rotvec(self.rotation_log), self.translation),
                         np.exp(self.log_semi_axes))

    @property
    def R(self):
        return so3_exp(self.rotation_log)

    @property
    def semi_axes(self):
        return np.exp(self.log_semi_axes)

    def dual_matrix(self):
        Z = np.eye(4)
        Z[:3, :3] = self.R
        Z[:3, 3] = self.translation
        return Z @ np.diag(np.append(np.exp(2.0 * self.log_semi_axes), -1.0)) @ Z.T

    def dual_quadric(self):
        return DualQuadric(self.dual_matrix())

    def vector(self):
        return np.concatenate([self.rotation_log, self.translation, self.log_semi_axes])

    def copy(self):
        return QuadricParams(self.rotation_log, self.translation, self.log_semi_axes)


def _info(info, n, default_sigma):
    if info is None:
        return np.eye(n) / default_sigma**2
    M = np.asarray(info, dtype=float).reshape(n, n)
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError("information matrix must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-12:
        raise ValueError("information matrix must be positive semi-definite")
    return M


@dataclass(eq=False)
class BBoxObs:
    frame_id: int
    object_id: int
    bbox: BBox2D
    info: np.ndarray = None

    def __post_init__(self):
        self.info = _info(self.info, 4, SIGMA_BBOX_PX)


@dataclass(eq=False)
class PointObs:
    frame_id: int
    point_id: int
    pixel: np.ndarray
    info: np.ndarray = None

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=float).reshape(2).copy()
        self.info = _info(self.info, 2, SIGMA_PIXEL_PX)


@dataclass(eq=False)
class ObjectPointLink:
    object_id: int
    point_id: int
    info: np.ndarray = None

    def __post_init__(self):
        self.info = _info(self.info, 1, SIGMA_OBJECT_POINT)


Observation = Union[BBoxObs, PointObs, ObjectPointLink]


@dataclass(eq=False)
class Problem:
    intrinsics: CameraIntrinsics
    poses: dict[int, RigidPose] = field(default_factory=dict)
    quadrics: dict[int, QuadricParams] = field(default_factory=dict)
    points: dict[int, np.ndarray] = field(default_factory=dict)
    observations: list = field(default_factory=list)
    fixed: set = field(default_factory=set)

    def validate(self):
        for ob in self.observations:
            if isinstance(ob, BBoxObs):
                refs = [("pose", ob.frame_id), ("quadric", ob.object_id)]
            elif isinstance(ob, PointObs):
                refs = [("pose", ob.frame_id), ("point", ob.point_id)]
            else:
                refs = [("quadric", ob.object_id), ("point", ob.point_id)]
            for kind, i in refs:
                if i not in self._table(kind):
                    raise ValueError(f"observation references missing {kind} {i}")
        if not any(key[0] == "pose" and key[1] in self.poses for key in self.fixed):
            raise GaugeError("at least one camera pose must be held fixed")

    def _table(self, kind):
        return {"pose": self.poses, "quadric": self.quadrics, "point": self.points}[kind]

    def copy(self):
        return Problem(self.intrinsics, dict(self.poses),
                       {k: q.copy() for k, q in self.quadrics.items()},
                       {k: np.array(p, dtype=float) for k, p in self.points.items()},
                       list(self.observations), set(self.fixed))


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    max_damping: float = 1e12
    rel_chi2_tol: float = 1e-14
    step_tol: float = 1e-12
    abs_chi2_tol: float = 1e-14
    fd_step: float = 1e-6
    analytic_jacobians: bool = True
    hold_unconstrained: bool = True
    robust_kernel: str | None = None
    huber_delta: float = 1.0

    def __post_init__(self):
        for name in ("max_iterations", "initial_damping", "damping_up", "damping_down",
                     "max_damping", "rel_chi2_tol", "step_tol", "fd_step", "huber_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.robust_kernel not in (None, "huber"):
            raise ValueError(f"unknown robust kernel {self.robust_kernel!r}")


@dataclass
class SolveReport:
    initial_chi2: float
    final_chi2: float
    iterations: int
    converged: bool
    family_chi2: dict[str, float]
    chi2_history: list[float]
    num_skipped: int = 0
    num_held_fixed: int = 0
    reason: str = ""

    def to_dict(self):
        return {"initial_chi2": self.initial_chi2, "final_chi2": self.final_chi2,
                "iterations": self.iterations, "converged": self.converged,
                "family_chi2": self.family_chi2, "chi2_history": self.chi2_history,
                "num_skipped": self.num_skipped, "num_held_fixed": self.num_held_fixed,
                "reason": self.reason}


# -- residual kernels -----------------------------------------------------------------

def _cam_point(Rc, tc, p, k: CameraIntrinsics, z):
    pc = Rc.T @ (p - tc)
    if pc[2] <= 1e-9:
        raise BehindCamera("point behind camera")
    return np.array([k.fx * pc[0] / pc[2] + k.cx - z[0], k.fy * pc[1] / pc[2] + k.cy - z[1]])


def _cam_object(Rc, tc, qmat, k: CameraIntrinsics, b):
    Rcw = Rc.T
    H = k.K @ np.hstack([Rcw, (-Rcw @ tc)[:, None]])
    center = qmat[:3, 3] / qmat[3, 3]
    in_front = bool((Rcw @ (center - tc))[2] > 0)
    return conic_bbox(DualConic(H @ qmat @ H.T, in_front)).as_array() - b


def residual_camera_object(pose: RigidPose, quadric: QuadricParams, obs: BBoxObs,
                           k: CameraIntrinsics):
    """Predicted minus measured bbox, ordered (u_max, v_max, u_min, v_min)."""
    return _cam_object(pose.R, pose.translation, quadric.dual_matrix(), k, obs.bbox.as_array())


def residual_camera_point(pose: RigidPose, point, obs: PointObs, k: CameraIntrinsics):
    return _cam_point(pose.R, pose.translation, np.asarray(point, dtype=float), k, obs.pixel)


def residual_object_point(quadric: QuadricParams, point):
    return np.array([point_quadric_error(quadric.dual_quadric(), point)])


def _obj_point_local(R, t, la, p):
    """Same value as point_quadric_error, from the ellipsoid's own frame."""
    d = p - t
    u = (R.T @ d) * np.exp(-la)
    n = float(np.sqrt(u @ u))
    return max(0.0, n - 1.0), u, n, d


def _obj_point_jac(R, t, la, p):
    """Jacobians of the object-point residual w.r.t. the quadric increment
    (dw, dt, dlog_a) as 1x9 and the point as 1x3. Zero inside the surface."""
    e, u, n, d = _obj_point_local(R, t, la, p)
    if e <= 0.0 or n == 0.0:
        return np.zeros((1, 9)), np.zeros((1, 3))
    g = (u / n) * np.exp(-la)            # d|u| / d(R^T d)
    Jp = (g @ R.T)[None, :]
    Jw = (g @ (R.T @ skew(d)))[None, :]
    Ja = (-(u * u) / n)[None, :]
    return np.hstack([Jw, -Jp, Ja]), Jp


def object_point_jacobian(quadric: QuadricParams, point):
    """Analytic Jacobians of the object-point residual.

    Returns (1x9 w.r.t. the quadric increment, 1x3 w.r.t. the point).
    """
    return _obj_point_jac(quadric.R, quadric.translation, quadric.log_semi_axes,
                          np.asarray(point, dtype=float))


def camera_point_jacobian(pose: RigidPose, point, k: CameraIntrinsics):
    """Analytic Jacobians of the reprojection residual.

    Returns (2x6 w.r.t. the pose increment (dw, dt), 2x3 w.r.t. the point).
    """
    return _cam_point_jac(pose.R, pose.translation, np.asarray(point, dtype=float), k)


def numeric_jacobian(fn: Callable, x, epsilon=1e-6):
    """Central finite differences of ``fn`` at ``x``.

    ``epsilon`` is relative: the step for component i is
    ``epsilon * max(1, |x_i|)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = epsilon * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2.0 * h)
    return J


# -- solver state -----------------------------------------------------------------------

_DIM = {"pose": 6, "quadric": 9, "point": 3}


class _State:
    """Raw-array view of the problem variables used inside the solver."""

    def __init__(self, problem: Problem):
        self.poses = {i: (p.R.copy(), p.translation.copy()) for i, p in problem.poses.items()}
        self.quadrics = {i: (q.R, q.translation.copy(), q.log_semi_axes.copy())
                         for i, q in problem.quadrics.items()}
        self.points = {i: np.array(p, dtype=float) for i, p in problem.points.items()}

    def get(self, kind, i):
        return {"pose": self.poses, "quadric": self.quadrics, "point": self.points}[kind][i]

    def retracted(self, layout, dx):
        new = object.__new__(_State)
        new.poses, new.quadrics, new.points = dict(self.poses), dict(self.quadrics), dict(self.points)
        for (kind, i), off in layout.items():
            new_val = _retract(kind, self.get(kind, i), dx[off:off + _DIM[kind]])
            {"pose": new.poses, "quadric": new.quadrics, "point": new.points}[kind][i] = new_val
        return new

    def write_back(self, problem: Problem):
        for i, (R, t) in self.poses.items():
            problem.poses[i] = RigidPose.from_Rt(R, t)
        for i, (R, t, la) in self.quadrics.items():
            problem.quadrics[i] = QuadricParams(so3_log(R), t, la)
        for i, p in self.points.items():
            problem.points[i] = p.copy()


def _retract(kind, val, d):
    if kind == "pose":
        R, t = val
        return so3_exp(d[:3]) @ R, t + d[3:]
    if kind == "quadric":
        R, t, la = val
        return so3_exp(d[:3]) @ R, t + d[3:6], la + d[6:]
    return val + d


def _scale_hint(kind, val):
    """Per-component magnitudes used for finite-difference step sizes."""
    if kind == "pose":
        return np.concatenate([np.ones(3), np.abs(val[1])])
    if kind == "quadric":
        return np.concatenate([np.ones(3), np.abs(val[1]), np.abs(val[2])])
    return np.abs(val)


def _qmat(val):
    R, t, la = val
    Z = np.eye(4)
    Z[:3, :3] = R
    Z[:3, 3] = t
    return Z @ np.diag(np.append(np.exp(2.0 * la), -1.0)) @ Z.T


def _obs_vars(ob):
    if isinstance(ob, BBoxObs):
        return [("pose", ob.frame_id), ("quadric", ob.object_id)]
    if isinstance(ob, PointObs):
        return [("pose", ob.frame_id), ("point", ob.point_id)]
    return [("quadric", ob.object_id), ("point", ob.point_id)]


def _family(ob):
    if isinstance(ob, BBoxObs):
        return "camera_object"
    if isinstance(ob, PointObs):
        return "camera_point"
    return "object_point"


def _eval(ob, vals, k):
    if isinstance(ob, BBoxObs):
        (Rc, tc), q = vals
        return _cam_object(Rc, tc, _qmat(q), k, ob.bbox.as_array())
    if isinstance(ob, PointObs):
        (Rc, tc), p = vals
        return _cam_point(Rc, tc, p, k, ob.pixel)
    (R, t, la), p = vals
    return np.array([_obj_point_local(R, t, la, p)[0]])


def _sqrt_info(info):
    w, V = np.linalg.eigh(info)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


_SKIP = (UnboundedConic, BehindCamera, NonEllipsoid, FloatingPointError)


class _Linearizer:
    def __init__(self, problem: Problem, config: SolverConfig):
        self.k = problem.intrinsics
        self.obs = list(problem.observations)
        self.config = config
        self.sqrt_info = [_sqrt_info(ob.info) for ob in self.obs]
        self.free = [key for kind in ("pose", "quadric", "point")
                     for key in sorted((kind, i) for i in problem._table(kind))
                     if key not in problem.fixed]
        self.layout, off = {}, 0
        for key in self.free:
            self.layout[key] = off
            off += _DIM[key[0]]
        self.n = off

    def _robust(self, rw):
        if self.config.robust_kernel != "huber":
            return 1.0, float(rw @ rw)
        e = float(np.linalg.norm(rw))
        d = self.config.huber_delta
        if e <= d:
            return 1.0, e * e
        return np.sqrt(d / e), 2.0 * d * e - d * d

    def cost(self, state: _State):
        total, fam, skipped = 0.0, {}, 0
        for ob, L in zip(self.obs, self.sqrt_info):
            vals = [state.get(*key) for key in _obs_vars(ob)]
            try:
                r = _eval(ob, vals, self.k)
            except _SKIP:
                skipped += 1
                continue
            _, c = self._robust(L @ r)
            total += c
            fam[_family(ob)] = fam.get(_family(ob), 0.0) + c
        return total, fam, skipped

    def _fd_block(self, ob, keys, vals, which):
        kind, _ = keys[which]
        base = vals[which]
        hint = _scale_hint(kind, base)
        m = _DIM[kind]
        cols = []
        for j in range(m):
            h = self.config.fd_step * max(1.0, hint[j])
            d = np.zeros(m)
            d[j] = h
            vp, vm = list(vals), list(vals)
            vp[which] = _retract(kind, base, d)
            vm[which] = _retract(kind, base, -d)
            cols.append((_eval(ob, vp, self.k) - _eval(ob, vm, self.k)) / (2.0 * h))
        return np.column_stack(cols)

    def linearize(self, state: _State):
        rows_r, rows_J = [], []
        skipped = 0
        for ob, L in zip(self.obs, self.sqrt_info):
            keys = _obs_vars(ob)
            vals = [state.get(*key) for key in keys]
            dim = L.shape[0]
            J = np.zeros((dim, self.n))
            try:
                r = _eval(ob, vals, self.k)
                if isinstance(ob, PointObs) and self.config.analytic_jacobians:
                    (Rc, tc), p = vals
                    blocks = list(_cam_point_jac(Rc, tc, p, self.k))
                elif isinstance(ob, ObjectPointLink) and self.config.analytic_jacobians:
                    (Rq, tq, la), p = vals
                    blocks = list(_obj_point_jac(Rq, tq, la, p))
                else:
                    blocks = [self._fd_block(ob, keys, vals, w) if keys[w] in self.layout else None
                              for w in range(len(keys))]
            except _SKIP:
                skipped += 1
                rows_r.append(np.zeros(dim))
                rows_J.append(J)
                continue
            for key, B in zip(keys, blocks):
                if key in self.layout and B is not None:
                    off = self.layout[key]
                    J[:, off:off + _DIM[key[0]]] = B
            rw = L @ r
            s, _ = self._robust(rw)
            rows_r.append(s * rw)
            rows_J.append(s * (L @ J))
        if not rows_r:
            return np.zeros(0), np.zeros((0, self.n)), skipped
        return np.concatenate(rows_r), np.vstack(rows_J), skipped


def _cam_point_jac(Rc, tc, p, k):
    d = p - tc
    x, y, z = Rc.T @ d
    Jproj = np.array([[k.fx / z, 0.0, -k.fx * x / z**2],
                      [0.0, k.fy / z, -k.fy * y / z**2]])
    return Jproj @ np.hstack([Rc.T @ skew(d), -Rc.T]), Jproj @ Rc.T


def solve(problem: Problem, config: SolverConfig = SolverConfig()):
    """Levenberg-Marquardt on the joint problem.

    Returns an updated copy of the problem and a SolveReport. Every accepted
    step strictly lowers the total chi-square; a step that fails to do so is
    retried with heavier damping.
    """
    problem.validate()
    lin = _Linearizer(problem, config)
    state = _State(problem)
    chi2, fam, _ = lin.cost(state)
    initial = chi2
    history = [chi2]
    lam = config.initial_damping
    iterations, converged, reason, held = 0, False, "max_iterations", 0
    skipped = 0

    if chi2 <= config.abs_chi2_tol or lin.n == 0:
        converged, reason = True, "already optimal" if lin.n else "no free variables"
    else:
        r, J, skipped = lin.linearize(state)
        while iterations < config.max_iterations:
            H = J.T @ J
            g = J.T @ r
            diag = np.diag(H).copy()
            active = np.ones(lin.n, dtype=bool)
            if config.hold_unconstrained:
                active = diag > 1e-300
                held = int(np.sum(~active))
            Ha, ga, da = H[np.ix_(active, active)], g[active], diag[active]
            accepted = False
            while True:
                A = Ha + lam * np.diag(da)
                try:
                    step = -cho_solve(cho_factor(A), ga)
                    ok = np.all(np.isfinite(step))
                except np.linalg.LinAlgError:
                    ok = False
                if not ok:
                    lam *= config.damping_up
                    if lam > config.max_damping:
                        raise SingularNormalEquations(
                            "damped normal equations are singular at maximum damping; "
                            "some variable is unconstrained")
                    continue
                dx = np.zeros(lin.n)
                dx[active] = step
                trial = state.retracted(lin.layout, dx)
                new_chi2, new_fam, _ = lin.cost(trial)
                if new_chi2 < chi2:
                    accepted = True
                    break
                lam *= config.damping_up
                if lam > config.max_damping:
                    break
            if not accepted:
                converged, reason = True, "no further decrease"
                break
            iterations += 1
            rel = (chi2 - new_chi2) / max(chi2, 1e-300)
            xnorm = np.linalg.norm(np.concatenate([np.ravel(v) for v in _flat(state)])) if lin.n else 0.0
            state, chi2, fam = trial, new_chi2, new_fam
            history.append(chi2)
            lam = max(lam * config.damping_down, 1e-15)
            if chi2 <= config.abs_chi2_tol:
                converged, reason = True, "chi2 below absolute tolerance"
                break
            if rel < config.rel_chi2_tol:
                converged, reason = True, "relative chi2 decrease below tolerance"
                break
            if np.linalg.norm(dx) < config.step_tol * (xnorm + config.step_tol):
                converged, reason = True, "step below tolerance"
                break
            r, J, skipped = lin.linearize(state)

    out = problem.copy()
    state.write_back(out)
    report = SolveReport(initial, chi2, iterations, converged, fam, history,
                         skipped, held, reason)
    log.info("LM: %s after %d iterations, chi2 %.3e -> %.3e", reason, iterations, initial, chi2)
    return out, report


def _flat(state):
    for R, t in state.poses.values():
        yield t
    for R, t, la in state.quadrics.values():
        yield np.concatenate([t, la])
    for p in state.points.values():
        yield p


def total_chi2(problem: Problem, config: SolverConfig = SolverConfig()):
    lin = _Linearizer(problem, config)
    chi2, fam, skipped = lin.cost(_State(problem))
    return chi2, fam


# -- object initialisation -----------------------------------------------------------------

def associate_points(points, detections, poses, k: CameraIntrinsics, min_frames: int = 2):
    """Associate map points with objects whose detection box they project into.

    ``points``: id -> xyz. ``detections``: frame id -> iterable of
    (object_id, BBox2D). ``poses``: frame id -> camera pose. A point joins an
    object once it falls inside that object's box in ``min_frames`` frames.
    """
    ids = sorted(points)
    if not ids:
        return {}
    P = np.array([points[i] for i in ids], dtype=float)
    hits = {}
    for frame_id, dets in detections.items():
        if frame_id not in poses:
            continue
        uv, z = project_points(k, poses[frame_id], P)
        front = z > 1e-9
        for object_id, box in dets:
            inside = front & box.contains(uv[:, 0], uv[:, 1])
            cnt = hits.setdefault(object_id, np.zeros(len(ids), dtype=int))
            cnt += inside
    return {oid: [ids[i] for i in np.nonzero(cnt >= min_frames)[0]]
            for oid, cnt in sorted(hits.items())}


def cluster_filter(points, k_tau: float = 3.0, return_index: bool = False):
    """Keep the largest single-linkage cluster.

    Linkage threshold is ``k_tau`` times the median nearest-neighbour
    distance. Ties go to the cluster containing the lowest input index.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    n = P.shape[0]
    if n <= 2:
        idx = np.arange(n)
        return (P, idx) if return_index else P
    tree = cKDTree(P)
    nn, _ = tree.query(P, k=2)
    tau = k_tau * float(np.median(nn[:, 1]))
    pairs = tree.query_pairs(tau, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) \
        if len(pairs) else coo_matrix((n, n))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    best = labels[np.argmax(sizes[labels] == sizes.max())]
    idx = np.nonzero(labels == best)[0]
    return (P[idx], idx) if return_index else P[idx]


def init_quadric_from_obb(points, min_axis_ratio: float = 1e-3) -> QuadricParams:
    """Ellipsoid inscribed in the covariance OBB of ``points``.

    Degenerate (flat) extents are floored at ``min_axis_ratio`` times the
    largest half-extent so the quadric stays invertible.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 4:
        raise TooFewPoints(f"need at least 4 points, got {P.shape[0]}")
    box = fit_obb(P)
    h = box.half_extents
    if h.max() <= 0:
        raise TooFewPoints("all points coincide")
    h = np.maximum(h, min_axis_ratio * h.max())
    return QuadricParams.from_ellipsoid(Ellipsoid(box.pose, h))


# -- JSON ------------------------------------------------------------------------------------

def problem_to_dict(problem: Problem) -> dict:
    k = problem.intrinsics
    obs = []
    for ob in problem.observations:
        if isinstance(ob, BBoxObs):
            obs.append({"type": "bbox", "frame_id": ob.frame_id, "object_id": ob.object_id,
                        "bbox": ob.bbox.as_array().tolist(), "info": ob.info.tolist()})
        elif isinstance(ob, PointObs):
            obs.append({"type": "point", "frame_id": ob.frame_id, "point_id": ob.point_id,
                        "pixel": ob.pixel.tolist(), "info": ob.info.tolist()})
        else:
            obs.append({"type": "link", "object_id": ob.object_id, "point_id": ob.point_id,
                        "info": ob.info.tolist()})
    return {
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
        "poses": [{"id": i, "quat_wxyz": p.rotation.quat.tolist(), "t": p.translation.tolist()}
                  for i, p in sorted(problem.poses.items())],
        "quadrics": [{"id": i, "rotation_log": q.rotation_log.tolist(),
                      "translation": q.translation.tolist(),
                      "log_semi_axes": q.log_semi_axes.tolist()}
                     for i, q in sorted(problem.quadrics.items())],
        "points": [{"id": i, "xyz": np.asarray(p).tolist()} for i, p in sorted(problem.points.items())],
        "observations": obs,
        "fixed": [{"kind": kind, "id": i} for kind, i in sorted(problem.fixed)],
    }


def problem_from_dict(d: dict) -> Problem:
    try:
        k = CameraIntrinsics(**{key: float(d["intrinsics"][key]) for key in ("fx", "fy", "cx", "cy")})
        poses = {int(p["id"]): RigidPose(Rotation(np.array(p["quat_wxyz"])), p["t"])
                 for p in d.get("poses", [])}
        quadrics = {int(q["id"]): QuadricParams(q["rotation_log"], q["translation"], q["log_semi_axes"])
                    for q in d.get("quadrics", [])}
        points = {int(p["id"]): np.asarray(p["xyz"], dtype=float) for p in d.get("points", [])}
        obs = []
        for o in d.get("observations", []):
            kind = o["type"]
            if kind == "bbox":
                obs.append(BBoxObs(int(o["frame_id"]), int(o["object_id"]),
                                   BBox2D.from_array(o["bbox"]), o.get("info")))
            elif kind == "point":
                obs.append(PointObs(int(o["frame_id"]), int(o["point_id"]), o["pixel"], o.get("info")))
            elif kind == "link":
                obs.append(ObjectPointLink(int(o["object_id"]), int(o["point_id"]), o.get("info")))
            else:
                raise ParseError(f"unknown observation type {kind!r}")
        fixed = {(f["kind"], int(f["id"])) for f in d.get("fixed", [])}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed problem: {exc!r}") from None
    return Problem(k, poses, quadrics, points, obs, fixed)


def save_problem(problem: Problem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=1, sort_keys=True) + "\n")


def load_problem(path) -> Problem:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return problem_from_dict(d)
