"""Box parameterization and pinhole projection between the ego frame and images.

Conventions: the ego/LiDAR frame has z up; yaw rotates about the vertical
axis. A camera is a 3x4 matrix T mapping homogeneous ego points to image
coordinates via d * [u v 1]^T = T * (p ⊕ 1), so d is the projective depth and
may be negative for points behind the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DataError, DegenerateProjectionError

# Corners with projective depth at or below this are treated as behind the
# camera and dropped from 2D box extraction.
BEHIND_CAMERA_EPS = 1e-6

# Below this |d| the point sits on the principal plane and u, v are undefined.
DEGENERATE_EPS = 1e-9


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t <= 0.0:
        t += 2.0 * math.pi
    return t - math.pi


@dataclass
class Box3D:
    """A 7-DoF box: center (m), length/width/height (m), yaw (rad), class label."""

    x_c: float
    y_c: float
    z_c: float
    l: float
    w: float
    h: float
    theta: float
    class_id: int = 0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise DataError(f"box sides must be positive, got l={self.l}, w={self.w}, h={self.h}")
        self.theta = wrap_angle(self.theta)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x_c, self.y_c, self.z_c], dtype=np.float64)


@dataclass
class CameraMatrix:
    """3x4 projective matrix (intrinsics x extrinsics) plus the image size."""

    T: np.ndarray
    image_w: int
    image_h: int

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.T.shape != (3, 4):
            raise ConfigurationError(f"camera matrix must be 3x4, got {self.T.shape}")
        if abs(np.linalg.det(self.T[:, :3])) < 1e-12:
            raise ConfigurationError("camera matrix has a singular upper-left 3x3 block")

    def center(self) -> np.ndarray:
        """Camera position in the ego frame (the point projecting to depth 0)."""
        return -np.linalg.solve(self.T[:, :3], self.T[:, 3])


@dataclass
class ProjectedPoint:
    """Image coordinates (u, v) in pixels and projective depth d in meters."""

    u: float
    v: float
    d: float

    @property
    def behind_camera(self) -> bool:
        return self.d <= BEHIND_CAMERA_EPS


@dataclass
class Box2D:
    """Axis-aligned image rectangle with the source box's center depth."""

    u_min: float
    u_max: float
    v_min: float
    v_max: float
    depth: float = 0.0

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise DataError(
                f"invalid 2D box extents ({self.u_min}, {self.u_max}, {self.v_min}, {self.v_max})"
            )


def project_point(cam: CameraMatrix, p) -> ProjectedPoint:
    """Project one ego-frame point; raises if it lies on the principal plane."""
    h = cam.T[:, :3] @ np.asarray(p, dtype=np.float64) + cam.T[:, 3]
    d = float(h[2])
    if abs(d) < DEGENERATE_EPS:
        raise DegenerateProjectionError(f"point {tuple(p)} projects to depth {d}")
    return ProjectedPoint(float(h[0]) / d, float(h[1]) / d, d)


def backproject_pixel(cam: CameraMatrix, u: float, v: float, d: float) -> np.ndarray:
    """Invert project_point: the ego-frame point at pixel (u, v) and depth d."""
    rhs = d * np.array([u, v, 1.0]) - cam.T[:, 3]
    return np.linalg.solve(cam.T[:, :3], rhs)


# Canonical corner offsets in half-extent units, sign pattern enumerated
# lexicographically over (x, y, z) with -1 before +1.
_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [-1, -1, +1],
        [-1, +1, -1],
        [-1, +1, +1],
        [+1, -1, -1],
        [+1, -1, +1],
        [+1, +1, -1],
        [+1, +1, +1],
    ],
    dtype=np.float64,
)


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners (ego frame, meters) in the fixed sign-pattern order."""
    half = _CORNER_SIGNS * np.array([box.l / 2.0, box.w / 2.0, box.h / 2.0])
    c, s = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return half @ rot.T + box.center


def project_box(cam: CameraMatrix, box: Box3D) -> tuple[ProjectedPoint, list[ProjectedPoint]]:
    """Project a box's center and corners; never aborts on behind-camera points.

    Corners on the principal plane get u = v = inf placeholders — they count
    as behind-camera and are discarded downstream.
    """
    points = []
    for p in np.vstack([box.center, box_corners(box)]):
        h = cam.T[:, :3] @ p + cam.T[:, 3]
        d = float(h[2])
        if abs(d) < DEGENERATE_EPS:
            points.append(ProjectedPoint(math.inf, math.inf, d))
        else:
            points.append(ProjectedPoint(float(h[0]) / d, float(h[1]) / d, d))
    return points[0], points[1:]


def extract_box2d(
    corners: list[ProjectedPoint], image_w: int, image_h: int, depth: float = 0.0
) -> Optional[Box2D]:
    """Bounding rectangle of the visible corners, clamped to the image.

    Returns None when every corner is behind the camera or the clamped
    rectangle has zero area.
    """
    us = [c.u for c in corners if not c.behind_camera]
    vs = [c.v for c in corners if not c.behind_camera]
    if not us:
        return None
    u_min = min(max(min(us), 0.0), float(image_w))
    u_max = min(max(max(us), 0.0), float(image_w))
    v_min = min(max(min(vs), 0.0), float(image_h))
    v_max = min(max(max(vs), 0.0), float(image_h))
    if u_min >= u_max or v_min >= v_max:
        return None
    return Box2D(u_min, u_max, v_min, v_max, depth=depth)


def collect_valid_boxes(boxes, cam: CameraMatrix, depth_range) -> list[tuple[Box2D, float]]:
    """2D boxes (with center depths) of the boxes visible in this camera.

    A box is kept iff its center's projective depth lies in
    [depth_range.d_min, depth_range.d_max] and its visible-corner rectangle is
    non-empty after clamping. Output order follows input order.
    """
    if not depth_range.d_min < depth_range.d_max:
        raise ConfigurationError(
            f"depth range must satisfy d_min < d_max, got [{depth_range.d_min}, {depth_range.d_max}]"
        )
    out = []
    for box in boxes:
        center, corners = project_box(cam, box)
        d_c = center.d
        if not (depth_range.d_min <= d_c <= depth_range.d_max):
            continue
        rect = extract_box2d(corners, cam.image_w, cam.image_h, depth=d_c)
        if rect is not None:
            out.append((rect, d_c))
    return out
