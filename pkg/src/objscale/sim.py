"""Synthetic worlds with a known metric scale.

A ``Scene`` lives in metric units. ``observe`` turns it into what a monocular
object-SLAM front end would hand over: a map divided by the true scale,
per-object dimension estimates with telemetry, per-frame detections and
point reprojections, each corrupted by the configured noise.

Scene JSON layout::

    {"format": "objscale.scene/1",
     "true_scale": 2.37,
     "cameras": [{"stamp": 0.0, "quat_wxyz": [...], "t": [...]}, ...],
     "objects": [{"id": 0, "class": "book", "quat_wxyz": [...],
                  "center": [...], "semi_axes": [...]}, ...],
     "points":  [{"id": 0, "xyz": [...], "object_id": 0 | null}, ...]}

Unknown keys are ignored on load.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BehindCamera, ParseError, UnboundedConic, UnknownClass
from .evaluation import Trajectory, format_tum
from .geometry import (BBox2D, CameraIntrinsics, Ellipsoid, RigidPose, Rotation,
                       batch_bboxes, conic_bbox, ellipsoid_to_dual_quadric, project_points, project_quadric)
from .joint import BBoxObs, ObjectPointLink, PointObs, Problem, QuadricParams
from .priors import PriorRepository, builtin_sample_priors
from .scale import ObjectEstimate

DEFAULT_INTRINSICS = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)

INDOOR_CLASSES = ("book", "bottle", "cup", "keyboard", "laptop", "monitor", "mouse", "plant")


@dataclass(frozen=True)
class SceneSpec:
    name: str = "indoor"
    classes: tuple = INDOOR_CLASSES
    num_objects: int = 20
    trajectory: str = "orbit"
    num_frames: int = 60
    duration: float = 30.0
    true_scale: float = 2.37
    size_spread: float = 1.0  # multiplier on prior std when drawing true sizes
    upright: bool = True
    points_per_object: int = 30
    num_background: int = 40
    # placement (metres)
    region: tuple = (1.2, 1.2)
    base_height: float = 0.75
    orbit_radius: float = 3.0
    orbit_height: float = 1.6
    path_length: float = 60.0
    shell: tuple = (4.0, 6.0)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "region", tuple(self.region))
        object.__setattr__(self, "shell", tuple(self.shell))
        if self.trajectory not in ("orbit", "straight"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if not self.classes:
            raise ValueError("scene spec needs at least one object class")
        if not self.true_scale > 0:
            raise ValueError("true_scale must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v)
                      for k, v in d.items() if k in known})


PRESETS = {
    "indoor": SceneSpec(),
    "outdoor": SceneSpec(name="outdoor", classes=("car",), num_objects=12,
                         trajectory="straight", true_scale=12.5, region=(80.0, 6.0),
                         base_height=0.0, orbit_height=1.65, path_length=60.0,
                         points_per_object=40, shell=(60.0, 90.0)),
}


@dataclass(frozen=True)
class NoiseConfig:
    bbox_sigma_px: float = 0.0
    pixel_sigma_px: float = 0.0
    dim_noise_frac: float = 0.0
    detection_prob_mean: float = 1.0
    detection_prob_std: float = 0.0
    misclassification_rate: float = 0.0
    # None: relabel to a uniformly random wrong class. A number: keep the
    # label but make the labelled prior overstate the true size by this factor.
    mislabel_offset: float | None = None
    point_jitter: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("bbox_sigma_px", "pixel_sigma_px", "dim_noise_frac",
                     "detection_prob_std", "point_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("detection_prob_mean", "misclassification_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mislabel_offset is not None and not self.mislabel_offset > 0:
            raise ValueError("mislabel_offset must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: int
    class_name: str
    ellipsoid: Ellipsoid


@dataclass(frozen=True, eq=False)
class ScenePoint:
    id: int
    xyz: np.ndarray
    object_id: int | None = None


@dataclass(eq=False)
class Scene:
    true_scale: float
    cameras: list  # (stamp, RigidPose), metric
    objects: list  # SceneObject, metric
    points: list   # ScenePoint, metric

    def __post_init__(self):
        stamps = [s for s, _ in self.cameras]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError("camera timestamps must be strictly increasing")

    @property
    def trajectory(self):
        return Trajectory(np.array([s for s, _ in self.cameras]), [p for _, p in self.cameras])


@dataclass(eq=False)
class UnscaledMap:
    """A map in arbitrary (monocular) units plus per-object estimates."""

    cameras: list
    objects: list
    points: list
    estimates: list
    true_scale: float | None = None

    def scaled(self, s):
        """Same map with every length multiplied by ``s``."""
        cams = [(t, RigidPose(p.rotation, s * p.translation)) for t, p in self.cameras]
        objs = [SceneObject(o.id, o.class_name,
                            Ellipsoid(RigidPose(o.ellipsoid.pose.rotation, s * o.ellipsoid.center),
                                      s * o.ellipsoid.semi_axes)) for o in self.objects]
        pts = [ScenePoint(p.id, s * p.xyz, p.object_id) for p in self.points]
        ests = [replace(e, dims=tuple(s * d for d in e.dims)) for e in self.estimates]
        truth = None if self.true_scale is None else self.true_scale / s
        return UnscaledMap(cams, objs, pts, ests, truth)

    @property
    def trajectory(self):
        return Trajectory(np.array([s for s, _ in self.cameras]), [p for _, p in self.cameras])

    def to_dict(self):
        d = _geometry_to_dict(self.cameras, self.objects, self.points)
        d["format"] = "objscale.map/1"
        d["estimates"] = [e.to_dict() for e in self.estimates]
        if self.true_scale is not None:
            d["true_scale"] = self.true_scale
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            cams, objs, pts = _geometry_from_dict(d)
            ests = [ObjectEstimate.from_dict(e) for e in d["estimates"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed map: {exc!r}") from None
        return cls(cams, objs, pts, ests, d.get("true_scale"))


@dataclass(frozen=True, eq=False)
class Detection:
    frame: int
    object_id: int
    class_name: str
    bbox: BBox2D
    prob: float


@dataclass(eq=False)
class Observations:
    map: UnscaledMap
    detections: list
    point_obs: list  # (frame, point_id, pixel)
    mislabeled_ids: list = field(default_factory=list)


# -- generation ---------------------------------------------------------------------------

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """Camera-to-world pose at ``eye`` with the optical axis towards ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, (1.0, 0.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidPose.from_Rt(np.column_stack([x, y, z]), eye)


def _trajectory(spec: SceneSpec):
    n = spec.num_frames
    stamps = np.linspace(0.0, spec.duration, n) if n > 1 else np.zeros(n)
    poses = []
    if spec.trajectory == "orbit":
        target = np.array([0.0, 0.0, spec.base_height])
        for k in range(n):
            a = 2.0 * np.pi * k / max(n, 1)
            eye = [spec.orbit_radius * np.cos(a), spec.orbit_radius * np.sin(a), spec.orbit_height]
            poses.append(look_at(eye, target))
    else:
        for k in range(n):
            x = spec.path_length * k / max(n - 1, 1)
            poses.append(look_at([x, 0.0, spec.orbit_height], [x + 10.0, 0.0, spec.orbit_height]))
    return [(float(t), p) for t, p in zip(stamps, poses)]


def _draw_dims(rng, prior, spread):
    dims = []
    for d in prior.dims:
        sd = d.std * spread
        if sd == 0:
            dims.append(d.mean)
            continue
        while True:
            x = rng.normal(d.mean, sd)
            if abs(x - d.mean) <= 3.0 * sd and x > 0:
                dims.append(x)
                break
    return np.sort(np.asarray(dims))[::-1]


def _surface_samples(rng, e: Ellipsoid, n):
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return e.pose.transform(u * e.semi_axes)


def generate_scene(spec: SceneSpec, seed: int, priors: PriorRepository | None = None) -> Scene:
    repo = priors if priors is not None else builtin_sample_priors()
    for c in spec.classes:
        if c not in repo:
            raise UnknownClass(f"class {c!r} has no size prior")
    ss = np.random.SeedSequence(seed)
    rng_obj, rng_pts = (np.random.default_rng(s) for s in ss.spawn(2))

    objects = []
    for i in range(spec.num_objects):
        cls = spec.classes[int(rng_obj.integers(len(spec.classes)))]
        dims = _draw_dims(rng_obj, repo[cls], spec.size_spread)
        if spec.upright:
            yaw = rng_obj.uniform(-np.pi, np.pi)
            rot = Rotation.from_rotvec([0.0, 0.0, yaw])
        else:
            q = rng_obj.normal(size=4)
            rot = Rotation(q)
        semi = dims / 2.0
        if spec.trajectory == "orbit":
            xy = rng_obj.uniform(-1.0, 1.0, 2) * np.asarray(spec.region)
        else:
            x = rng_obj.uniform(8.0, spec.region[0])
            side = 1.0 if rng_obj.random() < 0.5 else -1.0
            xy = np.array([x, side * rng_obj.uniform(3.0, spec.region[1])])
        center = np.array([xy[0], xy[1], spec.base_height + semi[2]])
        objects.append(SceneObject(i, cls, Ellipsoid(RigidPose(rot, center), semi)))

    points, pid = [], 0
    for o in objects:
        for p in _surface_samples(rng_pts, o.ellipsoid, spec.points_per_object):
            points.append(ScenePoint(pid, p, o.id))
            pid += 1
    centre = np.array([spec.path_length / 2.0, 0.0, 0.0]) if spec.trajectory == "straight" \
        else np.array([0.0, 0.0, spec.base_height])
    for _ in range(spec.num_background):
        u = rng_pts.normal(size=3)
        u /= np.linalg.norm(u)
        r = rng_pts.uniform(*spec.shell)
        points.append(ScenePoint(pid, centre + r * u, None))
        pid += 1

    return Scene(spec.true_scale, _trajectory(spec), objects, points)


def _image_contains(k: CameraIntrinsics, u, v):
    w, h = k.image_size
    return (u >= 0) & (u <= w) & (v >= 0) & (v <= h)


def visible_bbox(e, k: CameraIntrinsics, cam: RigidPose):
    """Projected box of ``e`` (Ellipsoid or DualQuadric) if it is in front of
    the camera with its box centre inside the image, else None."""
    q = ellipsoid_to_dual_quadric(e) if isinstance(e, Ellipsoid) else e
    try:
        b = conic_bbox(project_quadric(q, k, cam))
    except UnboundedConic:
        return None
    uc, vc = 0.5 * (b.u_max + b.u_min), 0.5 * (b.v_max + b.v_min)
    return b if _image_contains(k, uc, vc) else None


def observe(scene: Scene, noise: NoiseConfig = NoiseConfig(),
            intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
            priors: PriorRepository | None = None, point_observations: bool = True) -> Observations:
    s = scene.true_scale
    ss = np.random.SeedSequence(noise.rng_seed)
    rng_box, rng_prob, rng_dim, rng_mis, rng_px, rng_jit = (
        np.random.default_rng(x) for x in ss.spawn(6))

    n_obj = len(scene.objects)
    n_mis = int(round(noise.misclassification_rate * n_obj))
    mis_idx = sorted(int(i) for i in rng_mis.choice(n_obj, n_mis, replace=False)) if n_mis else []
    labels = {o.id: o.class_name for o in scene.objects}
    offsets = {o.id: 1.0 for o in scene.objects}
    mislabeled = []
    if mis_idx:
        classes = sorted(priors if priors is not None else builtin_sample_priors())
        for i in mis_idx:
            o = scene.objects[i]
            if noise.mislabel_offset is not None:
                offsets[o.id] = noise.mislabel_offset
            else:
                wrong = [c for c in classes if c != o.class_name]
                if not wrong:
                    continue
                labels[o.id] = wrong[int(rng_mis.integers(len(wrong)))]
            mislabeled.append(o.id)

    detections = []
    probs = {o.id: [] for o in scene.objects}
    duals = np.array([ellipsoid_to_dual_quadric(o.ellipsoid).matrix for o in scene.objects]) \
        if scene.objects else np.zeros((0, 4, 4))
    for f, (_, cam) in enumerate(scene.cameras):
        boxes, ok = batch_bboxes(duals, intrinsics, cam)
        uc, vc = 0.5 * (boxes[:, 0] + boxes[:, 2]), 0.5 * (boxes[:, 1] + boxes[:, 3])
        ok &= _image_contains(intrinsics, uc, vc)
        for i in np.nonzero(ok)[0]:
            o = scene.objects[i]
            arr = boxes[i]
            if noise.bbox_sigma_px > 0:
                arr = arr + rng_box.normal(0.0, noise.bbox_sigma_px, 4)
            u_hi, u_lo = max(arr[0], arr[2]), min(arr[0], arr[2])
            v_hi, v_lo = max(arr[1], arr[3]), min(arr[1], arr[3])
            p = noise.detection_prob_mean
            if noise.detection_prob_std > 0:
                p = float(np.clip(rng_prob.normal(p, noise.detection_prob_std), 0.0, 1.0))
            probs[o.id].append(p)
            detections.append(Detection(f, o.id, labels[o.id], BBox2D(u_hi, v_hi, u_lo, v_lo), p))

    point_obs = []
    if point_observations and scene.points:
        P = np.array([p.xyz for p in scene.points])
        ids = [p.id for p in scene.points]
        for f, (_, cam) in enumerate(scene.cameras):
            uv, z = project_points(intrinsics, cam, P)
            ok = (z > 1e-9) & _image_contains(intrinsics, uv[:, 0], uv[:, 1])
            idx = np.nonzero(ok)[0]
            px = uv[idx]
            if noise.pixel_sigma_px > 0:
                px = px + rng_px.normal(0.0, noise.pixel_sigma_px, px.shape)
            point_obs.extend((f, ids[i], px[j]) for j, i in enumerate(idx))

    owned = {o.id: 0 for o in scene.objects}
    for p in scene.points:
        if p.object_id is not None:
            owned[p.object_id] += 1

    estimates = []
    for o in scene.objects:
        d = 2.0 * o.ellipsoid.semi_axes / s / offsets[o.id]
        if noise.dim_noise_frac > 0:
            d = d * np.exp(rng_dim.normal(0.0, noise.dim_noise_frac, 3))
        d = np.sort(d)[::-1]
        estimates.append(ObjectEstimate(o.id, labels[o.id], tuple(d), tuple(probs[o.id]),
                                        owned[o.id], len(probs[o.id])))

    inv = 1.0 / s
    cams = [(t, RigidPose(p.rotation, inv * p.translation)) for t, p in scene.cameras]
    objs = [SceneObject(o.id, labels[o.id],
                        Ellipsoid(RigidPose(o.ellipsoid.pose.rotation, inv * o.ellipsoid.center),
                                  inv * o.ellipsoid.semi_axes)) for o in scene.objects]
    pts = []
    for p in scene.points:
        xyz = inv * p.xyz
        if noise.point_jitter > 0:
            xyz = xyz + rng_jit.normal(0.0, noise.point_jitter, 3)
        pts.append(ScenePoint(p.id, xyz, p.object_id))
    umap = UnscaledMap(cams, objs, pts, estimates, s)
    return Observations(umap, detections, point_obs, mislabeled)


# -- serialisation ------------------------------------------------------------------------------

def _pose_dict(p: RigidPose):
    return {"quat_wxyz": p.rotation.quat.tolist(), "t": p.translation.tolist()}


def _geometry_to_dict(cameras, objects, points):
    return {
        "cameras": [{"stamp": t, **_pose_dict(p)} for t, p in cameras],
        "objects": [{"id": o.id, "class": o.class_name,
                     "quat_wxyz": o.ellipsoid.pose.rotation.quat.tolist(),
                     "center": o.ellipsoid.center.tolist(),
                     "semi_axes": o.ellipsoid.semi_axes.tolist()} for o in objects],
        "points": [{"id": p.id, "xyz": np.asarray(p.xyz).tolist(), "object_id": p.object_id}
                   for p in points],
    }


def _geometry_from_dict(d):
    cams = [(float(c["stamp"]), RigidPose(Rotation(np.array(c["quat_wxyz"], dtype=float)), c["t"]))
            for c in d["cameras"]]
    objs = [SceneObject(int(o["id"]), str(o["class"]),
                        Ellipsoid(RigidPose(Rotation(np.array(o["quat_wxyz"], dtype=float)), o["center"]),
                                  o["semi_axes"])) for o in d["objects"]]
    pts = [ScenePoint(int(p["id"]), np.asarray(p["xyz"], dtype=float),
                      None if p.get("object_id") is None else int(p["object_id"]))
           for p in d["points"]]
    return cams, objs, pts


def scene_to_dict(scene: Scene) -> dict:
    d = _geometry_to_dict(scene.cameras, scene.objects, scene.points)
    d["format"] = "objscale.scene/1"
    d["true_scale"] = scene.true_scale
    return d


def scene_from_dict(d) -> Scene:
    try:
        cams, objs, pts = _geometry_from_dict(d)
        return Scene(float(d["true_scale"]), cams, objs, pts)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed scene: {exc!r}") from None


def dumps(d) -> str:
    return json.dumps(d, indent=1, sort_keys=True) + "\n"


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps(scene_to_dict(scene)))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_scene(path) -> Scene:
    return scene_from_dict(_load_json(path))


def save_map(umap: UnscaledMap, path) -> None:
    Path(path).write_text(dumps(umap.to_dict()))


def load_map(path) -> UnscaledMap:
    return UnscaledMap.from_dict(_load_json(path))


def export_trajectories(scene: Scene, estimated_poses, gt_path, est_path) -> None:
    """Write ground truth and estimate as TUM files sharing the scene stamps."""
    est = list(estimated_poses)
    if len(est) != len(scene.cameras):
        raise ValueError(f"{len(est)} estimated poses for {len(scene.cameras)} cameras")
    stamps = np.array([t for t, _ in scene.cameras])
    Path(gt_path).write_text(format_tum(scene.trajectory))
    Path(est_path).write_text(format_tum(Trajectory(stamps, est)))


# -- joint-optimisation fixtures --------------------------------------------------------------

def build_problem(scene: Scene, intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                  noise: NoiseConfig = NoiseConfig(), fixed_poses=(0, 1)) -> Problem:
    """Joint problem at ground truth with (optionally noisy) measurements.

    Every visible object yields a bbox observation, every visible point a
    reprojection, and every object-owned point an object-point link. The
    listed camera poses are held fixed; two fixed poses also pin the
    monocular scale gauge.
    """
    rng_box, rng_px = (np.random.default_rng(x) for x in np.random.SeedSequence(noise.rng_seed).spawn(2))
    poses = {f: p for f, (_, p) in enumerate(scene.cameras)}
    quadrics = {o.id: QuadricParams.from_ellipsoid(o.ellipsoid) for o in scene.objects}
    points = {p.id: np.array(p.xyz) for p in scene.points}
    obs = []
    for f, cam in poses.items():
        for o in scene.objects:
            b = visible_bbox(o.ellipsoid, intrinsics, cam)
            if b is None:
                continue
            arr = b.as_array()
            if noise.bbox_sigma_px > 0:
                arr = arr + rng_box.normal(0.0, noise.bbox_sigma_px, 4)
                arr = [max(arr[0], arr[2]), max(arr[1], arr[3]), min(arr[0], arr[2]), min(arr[1], arr[3])]
            obs.append(BBoxObs(f, o.id, BBox2D.from_array(arr)))
        for p in scene.points:
            uv, z = project_points(intrinsics, cam, p.xyz)
            if z[0] > 1e-9 and _image_contains(intrinsics, uv[0, 0], uv[0, 1]):
                px = uv[0]
                if noise.pixel_sigma_px > 0:
                    px = px + rng_px.normal(0.0, noise.pixel_sigma_px, 2)
                obs.append(PointObs(f, p.id, px))
    for p in scene.points:
        if p.object_id is not None:
            obs.append(ObjectPointLink(p.object_id, p.id))
    fixed = {("pose", f) for f in fixed_poses if f in poses}
    return Problem(intrinsics, poses, quadrics, points, obs, fixed)


def joint_scene(seed: int, num_cameras: int = 5, num_objects: int = 3,
                points_per_object: int = 20, priors: PriorRepository | None = None) -> Scene:
    """Small table-top scene sized for joint-optimisation tests."""
    spec = SceneSpec(name="joint", classes=("monitor", "plant", "laptop", "book"),
                     num_objects=num_objects, num_frames=num_cameras, true_scale=1.0,
                     points_per_object=points_per_object, num_background=0,
                     region=(0.6, 0.6), orbit_radius=2.5, upright=False)
    scene = generate_scene(spec, seed, priors)
    # spread the cameras over a half orbit so every object is seen from varied angles
    cams = []
    for k, (t, _) in enumerate(scene.cameras):
        a = np.pi * (k / max(num_cameras - 1, 1)) - np.pi / 2
        eye = [spec.orbit_radius * np.cos(a), spec.orbit_radius * np.sin(a),
               spec.orbit_height + 0.3 * np.sin(2 * a)]
        cams.append((t, look_at(eye, [0.0, 0.0, spec.base_height])))
    return Scene(scene.true_scale, cams, scene.objects, scene.points)
