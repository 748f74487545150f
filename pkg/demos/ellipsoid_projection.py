"""
Ellipsoids, their outlines, and a point-to-surface error
========================================================

Objects are modelled as ellipsoids. Their image is a conic whose bounding box
can be read off in closed form; we compare it with a brute-force outline from
sampled surface points.
"""

import numpy as np

from objscale.geometry import (CameraIntrinsics, Ellipsoid, RigidPose, Rotation, conic_bbox,
                               ellipsoid_to_dual_quadric, point_quadric_error,
                               project_points, project_quadric)

rng = np.random.default_rng(0)
k = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
cam = RigidPose.identity()

e = Ellipsoid(RigidPose(Rotation.from_rotvec([0.3, -0.4, 0.8]), [0.4, -0.2, 4.0]),
              [0.6, 0.35, 0.2])
Q = ellipsoid_to_dual_quadric(e)
box = conic_bbox(project_quadric(Q, k, cam))
print("closed-form box (u_max, v_max, u_min, v_min):", np.round(box.as_array(), 3))

# brute force: project many surface points and take the extremes
d = rng.normal(size=(200_000, 3))
d /= np.linalg.norm(d, axis=1, keepdims=True)
pts = (d * e.semi_axes) @ e.pose.R.T + e.center
uv, _ = project_points(k, cam, pts)
brute = np.array([uv[:, 0].max(), uv[:, 1].max(), uv[:, 0].min(), uv[:, 1].min()])
print("sampled outline                         :", np.round(brute, 3))
print("largest gap (px):", np.abs(brute - box.as_array()).max())

# The point error is zero inside, and outside it is the distance beyond the
# surface relative to the centre-to-surface distance along the same ray.
ray = e.pose.R @ np.array([e.semi_axes[0], 0.0, 0.0])
for t in (0.3, 0.6, 0.9, 1.2, 1.8):
    p = e.center + t * ray
    print(f"  {t:.1f} x semi-axis along x: error {point_quadric_error(Q, p):.3f}")
