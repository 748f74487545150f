"""Metric scale recovery for monocular object maps."""
from .errors import *  # noqa: F401,F403
from .geometry import (BBox2D, CameraIntrinsics, DualConic, DualQuadric, Ellipsoid,
                       GeometryConfig, OrientedBox, RigidPose, Rotation, conic_bbox,
                       dual_quadric_to_ellipsoid, ellipsoid_to_dual_quadric, fit_obb,
                       point_quadric_error, project_point, project_quadric)
from .priors import (DimensionPrior, PriorRepository, SizePrior, builtin_sample_priors,
                     load_priors, lookup, save_priors)
from .scale import (ConfidenceWeights, DimensionSample, ObjectEstimate, PipelineOptions,
                    ScaleSolution, ShapeClass, ShapeFeatures, apply_scale, classify_shape,
                    confidence, eliminate_outliers, estimate_scale, local_scales,
                    run_pipeline, select_dimensions, shape_features)
from .evaluation import (AteResult, SimilarityTransform, Trajectory, ate_rmse,
                         associate_timestamps, load_tum, rse, save_tum, umeyama_align)

__version__ = "0.1.0"
