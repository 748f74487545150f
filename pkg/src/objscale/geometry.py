"""Dual-quadric and pinhole-camera geometry.

Conventions
-----------
* ``RigidPose`` maps a local frame into the world: ``x_world = R @ x_local + t``.
  A camera pose is therefore camera-to-world, and the world-to-camera
  extrinsics used in ``H = K [R | t]`` are its inverse.
* Camera frame is x right, y down, z forward (depth).
* Bounding boxes are ordered ``(u_max, v_max, u_min, v_min)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import BehindCamera, EmptyInput, NonEllipsoid, UnboundedConic


@dataclass(frozen=True)
class GeometryConfig:
    """Numerical tolerances shared by the geometry routines."""

    atol: float = 1e-9
    max_condition: float = 1e12
    min_depth: float = 1e-9


DEFAULT_CONFIG = GeometryConfig()


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rodrigues formula: rotation vector -> 3x3 rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(theta) / theta * K
            + (1.0 - np.cos(theta)) / theta**2 * K @ K)


def so3_log(R):
    return _ScipyRotation.from_matrix(R).as_rotvec()


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion ``(w, x, y, z)``."""

    quat: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        q = q / n
        # canonical hemisphere keeps equality checks simple
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, R):
        x, y, z, w = _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
        return cls(np.array([w, x, y, z]))

    @classmethod
    def from_rotvec(cls, w):
        return cls.from_matrix(so3_exp(w))

    @cached_property
    def matrix(self):
        w, x, y, z = self.quat
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def as_rotvec(self):
        return so3_log(self.matrix)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.quat
        w2, x2, y2, z2 = other.quat
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self):
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def __repr__(self):
        return f"Rotation(quat={self.quat.tolist()})"


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3).copy())

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_Rt(cls, R, t):
        return cls(Rotation.from_matrix(R), t)

    @property
    def R(self):
        return self.rotation.matrix

    @property
    def t(self):
        return self.translation

    @cached_property
    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def __matmul__(self, other: "RigidPose") -> "RigidPose":
        return RigidPose(self.rotation @ other.rotation,
                         self.R @ other.translation + self.translation)

    def inverse(self) -> "RigidPose":
        inv = self.rotation.inverse()
        return RigidPose(inv, -(inv.matrix @ self.translation))

    def transform(self, points):
        """Map local points (N, 3) or a single 3-vector into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.translation

    def __repr__(self):
        return f"RigidPose(quat={self.rotation.quat.tolist()}, t={self.translation.tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def image_size(self):
        # the principal point is taken as the image centre
        return 2.0 * self.cx, 2.0 * self.cy


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    pose: RigidPose
    semi_axes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.semi_axes, dtype=float).reshape(3).copy()
        if not np.all(a > 0):
            raise ValueError(f"semi-axes must be positive, got {a}")
        object.__setattr__(self, "semi_axes", a)

    @property
    def center(self):
        return self.pose.translation

    def dims(self):
        """Full extents, sorted descending."""
        return np.sort(2.0 * self.semi_axes)[::-1]


@dataclass(frozen=True, eq=False)
class DualQuadric:
    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float).reshape(4, 4)
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))


@dataclass(frozen=True, eq=False)
class DualConic:
    """Projected outline of a dual quadric.

    ``in_front`` records whether the quadric's centre had positive depth when
    projected; the conic matrix alone cannot tell an object from its mirror
    image behind the camera.
    """

    matrix: np.ndarray
    in_front: bool = True

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))


@dataclass(frozen=True)
class BBox2D:
    u_max: float
    v_max: float
    u_min: float
    v_min: float

    def __post_init__(self):
        if self.u_max < self.u_min or self.v_max < self.v_min:
            raise ValueError(f"inverted bounding box {self}")

    def as_array(self):
        return np.array([self.u_max, self.v_max, self.u_min, self.v_min])

    @classmethod
    def from_array(cls, b):
        b = [float(x) for x in b]
        return cls(*b)

    def contains(self, u, v):
        return (self.u_min <= u) & (u <= self.u_max) & (self.v_min <= v) & (v <= self.v_max)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    pose: RigidPose
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=float).reshape(3).copy()
        if np.any(h < 0):
            raise ValueError("negative half extent")
        object.__setattr__(self, "half_extents", h)

    def contains(self, points, tol=1e-9):
        local = (np.atleast_2d(points) - self.pose.translation) @ self.pose.R
        return np.all(np.abs(local) <= self.half_extents + tol, axis=1)

    def volume(self):
        return float(np.prod(2.0 * self.half_extents))


# -- dual quadric construction ------------------------------------------------

def ellipsoid_to_dual_quadric(e: Ellipsoid) -> DualQuadric:
    Z = e.pose.matrix
    D = np.diag(np.append(e.semi_axes**2, -1.0))
    return DualQuadric(Z @ D @ Z.T)


def _normalized_dual(q: DualQuadric, cfg: GeometryConfig):
    M = q.matrix
    if abs(M[3, 3]) <= cfg.atol:
        raise NonEllipsoid("dual quadric has Q*(4,4) = 0 (paraboloid or degenerate)")
    return M / -M[3, 3]


def primal_form(q: DualQuadric, cfg: GeometryConfig = DEFAULT_CONFIG):
    """Point-form quadric ``Q = Z^-T diag(1/a^2, -1) Z^-1``.

    The scale is the one that makes ``Q(4,4) = -1`` in the ellipsoid's own
    frame, so ``p^T Q p + 1 = sum((p_local / a)^2)`` in any frame. Raises
    NonEllipsoid unless the result has eigen-signature (+, +, +, -).
    """
    M = q.matrix
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > cfg.max_condition:
        raise NonEllipsoid("dual quadric is singular or ill-conditioned")
    Q = np.linalg.inv(_normalized_dual(q, cfg))
    Q = 0.5 * (Q + Q.T)
    w = np.linalg.eigvalsh(Q)
    if not (np.sum(w > 0) == 3 and np.sum(w < 0) == 1):
        raise NonEllipsoid(f"quadric signature is not (+,+,+,-): eigenvalues {w}")
    # the (+,+,+,-) signature also admits hyperboloids of two sheets;
    # a real ellipsoid needs a positive-definite upper-left block.
    if np.linalg.eigvalsh(Q[:3, :3]).min() <= 0:
        raise NonEllipsoid("quadric is not a closed ellipsoid")
    return Q


def dual_quadric_to_ellipsoid(q: DualQuadric, cfg: GeometryConfig = DEFAULT_CONFIG) -> Ellipsoid:
    """Recover pose and semi-axes from a dual quadric.

    Semi-axes come back sorted descending; the rotation columns are the
    matching principal directions, flipped if needed so the frame is proper.
    """
    primal_form(q, cfg)  # signature / conditioning checks
    M = _normalized_dual(q, cfg)
    center = -M[:3, 3]
    shape = M[:3, :3] + np.outer(center, center)
    shape = 0.5 * (shape + shape.T)
    w, V = np.linalg.eigh(shape)
    if w.min() <= 0:
        raise NonEllipsoid("non-positive squared semi-axis")
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    if np.linalg.det(V) < 0:
        V[:, 2] = -V[:, 2]
    return Ellipsoid(RigidPose.from_Rt(V, center), np.sqrt(w))


# -- projection -----------------------------------------------------------------

def projection_matrix(k: CameraIntrinsics, cam: RigidPose):
    """3x4 ``H = K [R | t]`` with ``[R | t]`` the world-to-camera extrinsics."""
    Rcw = cam.R.T
    tcw = -Rcw @ cam.translation
    return k.K @ np.hstack([Rcw, tcw[:, None]])


def project_quadric(q: DualQuadric, k: CameraIntrinsics, cam: RigidPose) -> DualConic:
    H = projection_matrix(k, cam)
    M = q.matrix
    in_front = True
    if abs(M[3, 3]) > DEFAULT_CONFIG.atol:
        M = M / -M[3, 3]
        center = -M[:3, 3]
        depth = (cam.R.T @ (center - cam.translation))[2]
        in_front = bool(depth > 0)
    return DualConic(H @ M @ H.T, in_front=in_front)


def conic_bbox(c: DualConic) -> BBox2D:
    """Axis-aligned extent of the ellipse outline of a dual conic."""
    C = c.matrix
    # C*(3,3) < 0 means the camera's principal plane misses the ellipsoid
    if not c.in_front or not C[2, 2] < 0:
        raise UnboundedConic("quadric intersects or lies behind the principal plane")
    C = C / C[2, 2]
    disc_u = C[0, 2] ** 2 - C[0, 0]
    disc_v = C[1, 2] ** 2 - C[1, 1]
    if disc_u < 0 or disc_v < 0:
        raise UnboundedConic("negative discriminant in bounding-box extraction")
    su, sv = np.sqrt(disc_u), np.sqrt(disc_v)
    return BBox2D(C[0, 2] + su, C[1, 2] + sv, C[0, 2] - su, C[1, 2] - sv)


def point_quadric_error(q: DualQuadric, p, cfg: GeometryConfig = DEFAULT_CONFIG) -> float:
    """Zero inside or on the ellipsoid; outside, |p* p| / |o p*| where p* is
    where the segment from the centre o to p leaves the surface."""
    Q = primal_form(q, cfg)
    ph = np.append(np.asarray(p, dtype=float).reshape(3), 1.0)
    val = ph @ Q @ ph + 1.0
    return max(0.0, float(np.sqrt(max(val, 0.0))) - 1.0)


def project_point(k: CameraIntrinsics, cam: RigidPose, p, cfg: GeometryConfig = DEFAULT_CONFIG):
    pc = cam.R.T @ (np.asarray(p, dtype=float).reshape(3) - cam.translation)
    if pc[2] <= cfg.min_depth:
        raise BehindCamera(f"point depth {pc[2]:.3g} is not in front of the camera")
    return np.array([k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy])


def project_points(k: CameraIntrinsics, cam: RigidPose, points):
    """Vectorised pinhole projection; returns (uv, depth) without raising."""
    pc = (np.atleast_2d(points) - cam.translation) @ cam.R
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.column_stack([k.fx * pc[:, 0] / z + k.cx, k.fy * pc[:, 1] / z + k.cy])
    return uv, z


# -- oriented bounding box ------------------------------------------------------------

def _world_aligned_basis(V, cfg):
    """Replace an orthonormal basis of a degenerate eigenspace with the
    projections of the world axes closest to it."""
    P = V @ V.T
    norms = np.linalg.norm(P, axis=0)
    basis = []
    for i in np.argsort(-norms, kind="stable"):
        v = P[:, i].copy()
        for b in basis:
            v -= (b @ v) * b
        n = np.linalg.norm(v)
        if n > 1e-6:
            basis.append(v / n)
        if len(basis) == V.shape[1]:
            break
    return np.column_stack(basis)


def fit_obb(points, cfg: GeometryConfig = DEFAULT_CONFIG) -> OrientedBox:
    """Covariance-based oriented bounding box.

    Axes are the covariance eigenvectors ordered by decreasing variance;
    extents are the min/max of the points projected on each axis.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size == 0 or P.shape[0] < 1:
        raise EmptyInput("fit_obb needs at least one point")
    mean = P.mean(axis=0)
    X = P - mean
    cov = X.T @ X / P.shape[0]
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]

    # group (near-)equal eigenvalues and make their basis deterministic
    tie = cfg.atol * max(1.0, abs(w[0]))
    groups, start = [], 0
    for i in range(1, 4):
        if i == 3 or w[i - 1] - w[i] > tie:
            groups.append((start, i))
            start = i
    for a, b in groups:
        if b - a > 1:
            V[:, a:b] = _world_aligned_basis(V[:, a:b], cfg)

    for j in range(3):
        if V[np.argmax(np.abs(V[:, j])), j] < 0:
            V[:, j] = -V[:, j]
    if np.linalg.det(V) < 0:
        V[:, 2] = -V[:, 2]

    proj = X @ V
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = mean + V @ (0.5 * (lo + hi))
    return OrientedBox(RigidPose.from_Rt(V, center), 0.5 * (hi - lo))


def batch_bboxes(duals, k: CameraIntrinsics, cam: RigidPose):
    """Vectorised ``conic_bbox(project_quadric(q, k, cam))`` over a stack of
    dual-quadric matrices (n, 4, 4).

    Returns ``(boxes, valid)``: boxes (n, 4) ordered like BBox2D, NaN where
    the conic is unbounded; ``valid`` marks the bounded ones.
    """
    M = np.asarray(duals, dtype=float).reshape(-1, 4, 4)
    M = M / -M[:, 3:4, 3:4]
    H = projection_matrix(k, cam)
    C = np.einsum("ij,njk,lk->nil", H, M, H)
    depth = (-M[:, :3, 3] - cam.translation) @ cam.R[:, 2]
    c33 = C[:, 2, 2]
    valid = (depth > 0) & (c33 < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        Cn = C / c33[:, None, None]
        du = Cn[:, 0, 2] ** 2 - Cn[:, 0, 0]
        dv = Cn[:, 1, 2] ** 2 - Cn[:, 1, 1]
        valid &= (du >= 0) & (dv >= 0)
        su, sv = np.sqrt(du), np.sqrt(dv)
        boxes = np.column_stack([Cn[:, 0, 2] + su, Cn[:, 1, 2] + sv,
                                 Cn[:, 0, 2] - su, Cn[:, 1, 2] - sv])
    boxes[~valid] = np.nan
    return boxes, valid
