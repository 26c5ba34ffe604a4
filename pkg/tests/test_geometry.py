"""Projection, corner generation, 2D extraction, and visibility filtering."""

import math

import numpy as np
import pytest

from crossdtr.depthmap import DepthRange
from crossdtr.errors import ConfigurationError, DataError, DegenerateProjectionError
from crossdtr.geometry import (
    Box3D,
    CameraMatrix,
    ProjectedPoint,
    backproject_pixel,
    box_corners,
    collect_valid_boxes,
    extract_box2d,
    project_box,
    project_point,
    wrap_angle,
)


def identity_camera(image_w=640, image_h=480):
    return CameraMatrix(np.hstack([np.eye(3), np.zeros((3, 1))]), image_w, image_h)


def pinhole_camera(f=500.0, cx=320.0, cy=240.0, image_w=640, image_h=480):
    K = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
    return CameraMatrix(np.hstack([K, np.zeros((3, 1))]), image_w, image_h)


def test_project_point_identity_intrinsics():
    p = project_point(identity_camera(), (0.0, 0.0, 5.0))
    assert (p.u, p.v, p.d) == (0.0, 0.0, 5.0)


def test_project_point_hand_division():
    p = project_point(identity_camera(), (2.0, 1.0, 4.0))
    assert (p.u, p.v, p.d) == (0.5, 0.25, 4.0)


def test_project_point_matches_homogeneous_oracle():
    # Independent oracle: explicit homogeneous multiply with scalar arithmetic.
    cam = pinhole_camera()
    x, y, z = 1.0, 2.0, 10.0
    u_expected = (500.0 * x + 320.0 * z) / z
    v_expected = (500.0 * y + 240.0 * z) / z
    p = project_point(cam, (x, y, z))
    assert p.u == pytest.approx(u_expected)  # 370
    assert p.v == pytest.approx(v_expected)  # 340
    assert p.d == pytest.approx(10.0)
    assert (p.u, p.v) == (370.0, 340.0)


def test_project_point_degenerate_raises():
    with pytest.raises(DegenerateProjectionError):
        project_point(identity_camera(), (1.0, 1.0, 0.0))


def test_projection_consistency_invariant():
    rng = np.random.default_rng(0)
    for _ in range(50):
        T = np.eye(3, 4) + rng.normal(size=(3, 4)) * 0.2
        cam = CameraMatrix(T, 640, 480)
        p = rng.normal(size=3) * 5 + np.array([0, 0, 10])
        pt = project_point(cam, p)
        lhs = pt.d * np.array([pt.u, pt.v, 1.0])
        rhs = T @ np.append(p, 1.0)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6)


def test_box_corners_axis_aligned_cube():
    box = Box3D(0, 0, 0, 2, 2, 2, 0.0)
    corners = box_corners(box)
    expected = {(-1, -1, -1), (-1, -1, 1), (-1, 1, -1), (-1, 1, 1),
                (1, -1, -1), (1, -1, 1), (1, 1, -1), (1, 1, 1)}
    got = {tuple(np.round(c, 9)) for c in corners}
    assert got == {tuple(float(v) for v in e) for e in expected}
    # Fixed order: lexicographic sign pattern, -1 before +1.
    np.testing.assert_allclose(corners[0], [-1, -1, -1])
    np.testing.assert_allclose(corners[-1], [1, 1, 1])


def test_box_corners_quarter_turn_swaps_footprint():
    box = Box3D(0, 0, 0, 4, 2, 2, math.pi / 2)
    footprint = {(round(c[0], 9), round(c[1], 9)) for c in box_corners(box)}
    assert footprint == {(-1.0, -2.0), (-1.0, 2.0), (1.0, -2.0), (1.0, 2.0)}


def test_box_corners_vs_rotation_matrix_oracle():
    theta = math.pi / 6
    box = Box3D(2.0, -1.0, 0.5, 3.0, 1.5, 2.0, theta)
    # Oracle: rotate canonical corners with an explicit 2D rotation matrix.
    c, s = math.cos(theta), math.sin(theta)
    expected = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                x, y, z = sx * 1.5, sy * 0.75, sz * 1.0
                expected.append((2.0 + c * x - s * y, -1.0 + s * x + c * y, 0.5 + z))
    np.testing.assert_allclose(box_corners(box), expected, atol=1e-12)


def test_box_corners_yaw_equivariance():
    rng = np.random.default_rng(1)
    box = Box3D(1.0, 2.0, 0.0, 2.5, 1.0, 1.5, 0.4)
    delta = 0.7
    rotated = Box3D(1.0, 2.0, 0.0, 2.5, 1.0, 1.5, 0.4 + delta)
    c, s = math.cos(delta), math.sin(delta)
    base = box_corners(box) - box.center
    spun = base.copy()
    spun[:, 0] = c * base[:, 0] - s * base[:, 1]
    spun[:, 1] = s * base[:, 0] + c * base[:, 1]
    np.testing.assert_allclose(box_corners(rotated), spun + box.center, atol=1e-9)


def test_box3d_validation():
    with pytest.raises(DataError):
        Box3D(0, 0, 0, -1.0, 1.0, 1.0, 0.0)
    assert Box3D(0, 0, 0, 1, 1, 1, 3 * math.pi).theta == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_project_box_center_and_behind_flag():
    cam = identity_camera()
    center, corners = project_box(cam, Box3D(0, 0, 10, 1, 1, 1, 0))
    assert (center.u, center.v, center.d) == (0.0, 0.0, 10.0)
    assert len(corners) == 8 and not center.behind_camera

    behind, _ = project_box(cam, Box3D(0, 0, -5, 1, 1, 1, 0))
    assert behind.behind_camera


def test_project_box_matches_per_corner_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        T = np.eye(3, 4) + rng.normal(size=(3, 4)) * 0.1
        cam = CameraMatrix(T, 640, 480)
        box = Box3D(*rng.uniform(-2, 2, size=3), *rng.uniform(0.5, 3, size=3),
                    rng.uniform(-3, 3), 0)
        box.z_c += 12.0
        _, corners = project_box(cam, box)
        for corner3d, pt in zip(box_corners(box), corners):
            h = T @ np.append(corner3d, 1.0)
            np.testing.assert_allclose([pt.u * pt.d, pt.v * pt.d, pt.d], h, atol=1e-9)


def test_extract_box2d_degenerate_point_is_absent():
    pts = [ProjectedPoint(10.0, 20.0, 5.0)] * 8
    assert extract_box2d(pts, 640, 480) is None


def test_extract_box2d_inside_image():
    cam = pinhole_camera()
    box = Box3D(0, 0, 10, 2, 2, 2, 0.3)
    _, corners = project_box(cam, box)
    rect = extract_box2d(corners, cam.image_w, cam.image_h)
    us = [c.u for c in corners]
    vs = [c.v for c in corners]
    assert rect.u_min == pytest.approx(min(us))
    assert rect.u_max == pytest.approx(max(us))
    assert rect.v_min == pytest.approx(min(vs))
    assert rect.v_max == pytest.approx(max(vs))


def test_extract_box2d_clamps_left_edge():
    cam = pinhole_camera()
    box = Box3D(-7.0, 0, 10, 2, 2, 2, 0.0)  # pokes out of the left edge
    _, corners = project_box(cam, box)
    assert any(c.u < 0 for c in corners)
    rect = extract_box2d(corners, cam.image_w, cam.image_h)
    assert rect.u_min == 0.0


def test_extract_box2d_all_behind_camera():
    pts = [ProjectedPoint(1.0, 1.0, -2.0)] * 8
    assert extract_box2d(pts, 640, 480) is None


def test_extract_box2d_monotone_under_extra_corner():
    pts = [ProjectedPoint(10, 10, 5), ProjectedPoint(20, 30, 5)]
    small = extract_box2d(pts, 640, 480)
    grown = extract_box2d(pts + [ProjectedPoint(100, 5, 5)], 640, 480)
    assert grown.u_max >= small.u_max and grown.v_min <= small.v_min


def test_collect_valid_boxes_empty_and_range_rule():
    cam = pinhole_camera()
    r = DepthRange(1.0, 61.2, 16)
    assert collect_valid_boxes([], cam, r) == []
    far = Box3D(0, 0, r.d_max + 1.0, 2, 2, 2, 0)
    assert collect_valid_boxes([far], cam, r) == []


def test_collect_valid_boxes_matches_predicate_oracle():
    rng = np.random.default_rng(3)
    cam = pinhole_camera(image_w=200, image_h=100)
    r = DepthRange(1.0, 30.0, 8)
    boxes = [
        Box3D(rng.uniform(-20, 20), rng.uniform(-10, 10), rng.uniform(-5, 40),
              *rng.uniform(0.5, 3, size=3), rng.uniform(-3, 3), 0)
        for _ in range(20)
    ]
    kept = collect_valid_boxes(boxes, cam, r)
    # Oracle: re-evaluate the two predicates independently per box.
    expected_indices = []
    for i, b in enumerate(boxes):
        h = cam.T @ np.append(b.center, 1.0)
        d_c = h[2]
        if not (r.d_min <= d_c <= r.d_max):
            continue
        us, vs = [], []
        for corner in box_corners(b):
            hc = cam.T @ np.append(corner, 1.0)
            if hc[2] > 1e-6:
                us.append(hc[0] / hc[2])
                vs.append(hc[1] / hc[2])
        if not us:
            continue
        u0 = min(max(min(us), 0), 200)
        u1 = min(max(max(us), 0), 200)
        v0 = min(max(min(vs), 0), 100)
        v1 = min(max(max(vs), 0), 100)
        if u0 < u1 and v0 < v1:
            expected_indices.append(i)
    got_depths = [d for _, d in kept]
    expected_depths = [float((cam.T @ np.append(boxes[i].center, 1.0))[2]) for i in expected_indices]
    assert got_depths == pytest.approx(expected_depths)
    assert len(kept) == len(expected_indices)


def test_rigid_transform_invariance():
    # Moving the world and composing the camera accordingly changes nothing.
    rng = np.random.default_rng(4)
    cam = pinhole_camera()
    box = Box3D(1.0, -2.0, 12.0, 2.0, 1.0, 1.5, 0.6)
    angle = 0.5
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    t = np.array([3.0, -1.0, 2.0])
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    moved_box = Box3D(*(R @ box.center + t), box.l, box.w, box.h, box.theta + angle, 0)
    moved_cam = CameraMatrix(cam.T @ np.linalg.inv(M), cam.image_w, cam.image_h)
    c0, k0 = project_box(cam, box)
    c1, k1 = project_box(moved_cam, moved_box)
    assert (c0.u, c0.v, c0.d) == pytest.approx((c1.u, c1.v, c1.d))
    for a, b in zip(k0, k1):
        assert (a.u, a.v, a.d) == pytest.approx((b.u, b.v, b.d))


def test_backproject_inverts_projection():
    cam = pinhole_camera()
    p = np.array([1.5, -2.0, 14.0])
    pt = project_point(cam, p)
    np.testing.assert_allclose(backproject_pixel(cam, pt.u, pt.v, pt.d), p, atol=1e-9)


def test_camera_matrix_requires_invertible_block():
    T = np.zeros((3, 4))
    with pytest.raises(ConfigurationError):
        CameraMatrix(T, 10, 10)
