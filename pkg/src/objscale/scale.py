"""Absolute scale estimation from object dimensions and size priors.

Pipeline: look up each object's class prior, score the object's reliability,
keep only its stable dimensions (by shape class), convert each kept
dimension to a local scale ``prior_mean / dim``, reject boxplot outliers
among the local scales, then solve the confidence- and variance-weighted
least-squares problem for a single global scale in closed form.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (DegenerateProblem, InvalidDims, NoDetections, NonPositiveScale,
                     NoSamples, NoUsableObjects)
from .geometry import Ellipsoid, RigidPose
from .priors import DimensionPrior, PriorRepository, SizePrior

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectEstimate:
    id: int
    class_name: str
    dims: tuple[float, float, float]
    detection_probs: tuple[float, ...] = ()
    num_points: int = 0
    num_detections: int = 0

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "detection_probs", tuple(float(p) for p in self.detection_probs))
        _check_dims(dims)
        if len(self.detection_probs) != self.num_detections:
            raise ValueError(f"object {self.id}: {len(self.detection_probs)} detection "
                             f"probabilities for {self.num_detections} detections")
        if self.num_points < 0:
            raise ValueError("num_points must be >= 0")

    def to_dict(self):
        return {"id": self.id, "class": self.class_name, "dims_desc": list(self.dims),
                "detection_probs": list(self.detection_probs),
                "num_points": self.num_points, "num_detections": self.num_detections}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["id"]), str(d["class"]), tuple(d["dims_desc"]),
                   tuple(d.get("detection_probs", ())), int(d.get("num_points", 0)),
                   int(d.get("num_detections", len(d.get("detection_probs", ())))))


class ShapeClass(enum.Enum):
    POLE_LIKE = "pole-like"
    DISK_LIKE = "disk-like"
    GENERAL = "general"


@dataclass(frozen=True)
class ShapeFeatures:
    linearity: float
    planarity: float
    scattering: float


@dataclass(frozen=True)
class DimensionSample:
    object_id: int
    dim: float
    prior: DimensionPrior
    confidence: float = 1.0
    dim_index: int = 0

    @property
    def local_scale(self):
        return self.prior.mean / self.dim


@dataclass(frozen=True)
class ConfidenceWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    a: float = 10.0
    b: float = 15.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0 or self.w1 + self.w2 + self.w3 <= 0:
            raise ValueError("weights must be nonnegative with a positive sum")
        if not (self.a > 1 and self.b > 1):
            raise ValueError("log bases must exceed 1")


@dataclass(frozen=True)
class PipelineOptions:
    """Switches for the three optional stages plus a confidence gate."""

    outlier_elimination: bool = True
    dimension_selection: bool = True
    uncertainty: bool = True
    confidence_floor: float = 0.0
    iterate_outliers: bool = False


@dataclass
class ScaleSolution:
    scale: float
    weighted_residual: float
    num_inliers: int
    inlier_ids: list[int]
    inliers: list[DimensionSample] = field(default_factory=list)
    outliers: list[DimensionSample] = field(default_factory=list)
    skipped_ids: list[int] = field(default_factory=list)
    rejected_ids: list[int] = field(default_factory=list)


def _check_dims(dims):
    if len(dims) != 3:
        raise InvalidDims(f"expected three dimensions, got {len(dims)}")
    d1, d2, d3 = dims
    if not d3 > 0:
        raise InvalidDims(f"dimensions must be positive: {dims}")
    if not (d1 >= d2 >= d3):
        raise InvalidDims(f"dimensions must be sorted descending: {dims}")


def shape_features(dims) -> ShapeFeatures:
    dims = tuple(float(d) for d in dims)
    _check_dims(dims)
    d1, d2, d3 = dims
    return ShapeFeatures((d1 - d2) / d1, (d2 - d3) / d1, d3 / d1)


def classify_shape(f: ShapeFeatures) -> ShapeClass:
    if f.scattering < 0.3:
        if f.linearity > 0.5:
            return ShapeClass.POLE_LIKE
        if f.planarity > 0.5:
            return ShapeClass.DISK_LIKE
    return ShapeClass.GENERAL


_KEEP = {ShapeClass.POLE_LIKE: 1, ShapeClass.DISK_LIKE: 2, ShapeClass.GENERAL: 3}


def select_dimensions(obj: ObjectEstimate, prior: SizePrior, conf: float,
                      enabled: bool = True) -> list[DimensionSample]:
    """Pair the object's stable dimensions with the prior, longest first."""
    n = _KEEP[classify_shape(shape_features(obj.dims))] if enabled else 3
    return [DimensionSample(obj.id, obj.dims[i], prior.dims[i], conf, i) for i in range(n)]


def _clamped_log(x, base):
    if x <= 0:
        return 0.0
    return min(1.0, max(0.0, math.log(x) / math.log(base)))


def confidence(obj: ObjectEstimate, w: ConfidenceWeights = ConfidenceWeights()) -> float:
    if obj.num_detections < 1:
        raise NoDetections(f"object {obj.id} has no detections")
    c_det = math.fsum(obj.detection_probs) / obj.num_detections
    c_pt = _clamped_log(obj.num_points, w.a)
    c_vis = _clamped_log(obj.num_detections, w.b)
    return (w.w1 * c_det + w.w2 * c_pt + w.w3 * c_vis) / (w.w1 + w.w2 + w.w3)


def local_scales(samples: Sequence[DimensionSample]) -> np.ndarray:
    return np.array([s.prior.mean / s.dim for s in samples], dtype=float)


def _boxplot_pass(samples):
    if len(samples) < 4:
        return list(samples), []
    ls = local_scales(samples)
    q1, q3 = np.percentile(ls, [25.0, 75.0])
    iqr = q3 - q1
    keep = (ls >= q1 - 1.5 * iqr) & (ls <= q3 + 1.5 * iqr)
    inliers = [s for s, k in zip(samples, keep) if k]
    outliers = [s for s, k in zip(samples, keep) if not k]
    return inliers, outliers


def eliminate_outliers(samples: Sequence[DimensionSample], iterate: bool = False):
    """Boxplot fence (Q1 - 1.5 IQR, Q3 + 1.5 IQR) on the local scales.

    Quartiles use linear interpolation between order statistics. Fewer than
    four samples pass through untouched. One pass by default; ``iterate``
    repeats until nothing more is rejected.
    """
    inliers, outliers = _boxplot_pass(samples)
    while iterate and outliers:
        inliers, more = _boxplot_pass(inliers)
        if not more:
            break
        outliers.extend(more)
    return inliers, outliers


def _weights(samples):
    c = np.array([s.confidence for s in samples], dtype=float)
    sigma = np.array([s.prior.std for s in samples], dtype=float)
    return c * c / (sigma * sigma)


def estimate_scale(samples: Sequence[DimensionSample]) -> ScaleSolution:
    """Closed-form minimiser of sum_i (c_i (mu_i - s d_i) / sigma_i)^2."""
    if len(samples) == 0:
        raise NoSamples("no dimension samples to estimate from")
    w = _weights(samples)
    mu = np.array([s.prior.mean for s in samples], dtype=float)
    d = np.array([s.dim for s in samples], dtype=float)
    den = float(np.sum(w * d * d))
    if den <= 1e-15:
        raise DegenerateProblem("all samples carry zero weight")
    s = float(np.sum(w * mu * d)) / den
    e = mu - s * d
    ids = sorted({x.object_id for x in samples})
    return ScaleSolution(s, float(np.sum(w * e * e)), len(samples), ids, inliers=list(samples))


def run_pipeline(objects: Sequence[ObjectEstimate], repo: PriorRepository,
                 w: ConfidenceWeights = ConfidenceWeights(),
                 options: PipelineOptions = PipelineOptions()) -> ScaleSolution:
    samples, skipped, rejected = [], [], []
    for obj in sorted(objects, key=lambda o: o.id):
        prior = repo.get(obj.class_name)
        if prior is None:
            skipped.append(obj.id)
            continue
        if options.uncertainty:
            try:
                c = confidence(obj, w)
            except NoDetections:
                rejected.append(obj.id)
                continue
            if c < options.confidence_floor:
                rejected.append(obj.id)
                continue
        else:
            c = 1.0
        samples.extend(select_dimensions(obj, prior, c, enabled=options.dimension_selection))
    if skipped:
        log.warning("skipped %d object(s) with no size prior", len(skipped))

    if options.outlier_elimination:
        inliers, outliers = eliminate_outliers(samples, iterate=options.iterate_outliers)
    else:
        inliers, outliers = samples, []
    if not inliers:
        raise NoUsableObjects(f"no usable objects ({len(skipped)} without prior, "
                              f"{len(rejected)} rejected)")
    try:
        sol = estimate_scale(inliers)
    except DegenerateProblem as exc:
        raise NoUsableObjects(str(exc)) from exc
    sol.outliers = outliers
    sol.skipped_ids = skipped
    sol.rejected_ids = rejected
    return sol


def apply_scale(m, s: float):
    """Multiply every length in a map-like value by ``s``.

    Accepts poses, ellipsoids, object estimates, point arrays, sequences of
    those, or any object exposing ``scaled(s)``. Rotations are untouched.
    """
    if not s > 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    if hasattr(m, "scaled"):
        return m.scaled(s)
    if isinstance(m, RigidPose):
        return RigidPose(m.rotation, s * m.translation)
    if isinstance(m, Ellipsoid):
        return Ellipsoid(RigidPose(m.pose.rotation, s * m.pose.translation), s * m.semi_axes)
    if isinstance(m, ObjectEstimate):
        return replace(m, dims=tuple(s * d for d in m.dims))
    if isinstance(m, np.ndarray):
        return s * m
    if isinstance(m, (list, tuple)):
        return type(m)(apply_scale(x, s) for x in m)
    raise TypeError(f"don't know how to scale {type(m).__name__}")
