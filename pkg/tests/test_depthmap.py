"""LID discretization and sparse depth-map rasterization."""

import numpy as np
import pytest

from crossdtr.depthmap import (
    DepthRange,
    SparseDepthMap,
    build_sparse_depth_maps,
    discretize,
    lid_bin,
    lid_depth,
    rasterize,
    read_pgm,
    write_pgm,
)
from crossdtr.errors import ConfigurationError, DataError, UsageError
from crossdtr.geometry import Box2D, Box3D, CameraMatrix
from crossdtr.oracles import lid_bin_reference, rasterize_reference


R4 = DepthRange(0.0, 10.0, 4)  # edges 0, 1, 3, 6, 10


def test_lid_edges_explicit():
    np.testing.assert_allclose(R4.edges(), [0.0, 1.0, 3.0, 6.0, 10.0])


def test_lid_bin_boundaries():
    assert lid_bin(0.0, R4) == 1
    assert lid_bin(10.0 - 1e-9, R4) == 4
    assert lid_bin(10.0, R4) == 4
    assert lid_bin(2.5, R4) == 2


def test_lid_bin_matches_edge_scan_oracle():
    rng = np.random.default_rng(0)
    for r in (R4, DepthRange(1.0, 61.2, 16), DepthRange(2.0, 50.0, 64)):
        edges = r.edges()
        for d in rng.uniform(r.d_min, r.d_max, size=200):
            assert lid_bin(float(d), r) == lid_bin_reference(float(d), edges)


def test_lid_bin_out_of_range():
    with pytest.raises(DataError):
        lid_bin(-0.1, R4)
    with pytest.raises(DataError):
        lid_bin(10.1, R4)


def test_lid_depth_first_bin_midpoint():
    assert lid_depth(1, R4) == pytest.approx(0.5)


def test_lid_depth_last_bin_below_dmax():
    assert lid_depth(4, R4) < 10.0


def test_lid_depth_background_rejected():
    with pytest.raises(UsageError):
        lid_depth(0, R4)


def test_lid_round_trip_all_bins():
    for r in (R4, DepthRange(1.0, 61.2, 16), DepthRange(2.0, 50.0, 64)):
        for i in range(1, r.num_bins + 1):
            assert lid_bin(lid_depth(i, r), r) == i


def test_lid_widths_strictly_increase():
    for r in (R4, DepthRange(1.0, 61.2, 16), DepthRange(0.5, 40.0, 64)):
        widths = np.diff(r.edges())
        assert (np.diff(widths) > 0).all()


def test_lid_bin_monotone_in_depth():
    r = DepthRange(1.0, 61.2, 16)
    ds = np.linspace(r.d_min, r.d_max, 500)
    bins = [lid_bin(float(d), r) for d in ds]
    assert all(b2 >= b1 for b1, b2 in zip(bins, bins[1:]))


def test_depth_range_validation():
    with pytest.raises(ConfigurationError):
        DepthRange(5.0, 5.0, 4)
    with pytest.raises(ConfigurationError):
        DepthRange(1.0, 10.0, 1)


# ---------------------------------------------------------------------------
# rasterization


def test_rasterize_empty_is_zero():
    grid = rasterize([], 6, 4, 96, 32)
    np.testing.assert_array_equal(grid, np.zeros((4, 6)))


def test_rasterize_full_cover_single_depth():
    grid = rasterize([(Box2D(0, 96, 0, 32), 7.0)], 6, 4, 96, 32)
    np.testing.assert_array_equal(grid, np.full((4, 6), 7.0))


def test_rasterize_matches_per_pixel_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        boxes = []
        for _ in range(10):
            u0, v0 = rng.uniform(0, 80), rng.uniform(0, 24)
            rect = Box2D(u0, u0 + rng.uniform(1, 40), v0, v0 + rng.uniform(1, 20),
                         depth=rng.uniform(1, 60))
            boxes.append((rect, rect.depth))
        fast = rasterize(boxes, 12, 8, 96, 32)
        slow = rasterize_reference(boxes, 12, 8, 96, 32)
        np.testing.assert_array_equal(fast, slow)


def test_rasterize_nearest_wins_and_order_free():
    near = (Box2D(0, 96, 0, 32), 3.0)
    far = (Box2D(0, 96, 0, 32), 9.0)
    a = rasterize([near, far], 6, 4, 96, 32)
    b = rasterize([far, near], 6, 4, 96, 32)
    np.testing.assert_array_equal(a, np.full((4, 6), 3.0))
    np.testing.assert_array_equal(a, b)


def test_rasterize_boundary_closed_open():
    # Pixel centers sit at u = 8, 24, ... A box ending exactly at 24 must not
    # cover the second column; one starting at 24 must.
    ends_at = rasterize([(Box2D(0.0, 24.0, 0.0, 32.0), 5.0)], 6, 4, 96, 32)
    starts_at = rasterize([(Box2D(24.0, 96.0, 0.0, 32.0), 5.0)], 6, 4, 96, 32)
    assert ends_at[0, 0] == 5.0 and ends_at[0, 1] == 0.0
    assert starts_at[0, 0] == 0.0 and starts_at[0, 1] == 5.0


def identity_rig(image_w=96, image_h=32):
    K = np.array([[40.0, 0, image_w / 2], [0, 40.0, image_h / 2], [0, 0, 1.0]])
    return CameraMatrix(np.hstack([K, np.zeros((3, 1))]), image_w, image_h)


def test_build_maps_empty_scene():
    cams = [identity_rig(), identity_rig()]
    maps = build_sparse_depth_maps([], cams, DepthRange(1, 61.2, 16), 6, 2)
    assert len(maps) == 2
    for m in maps:
        np.testing.assert_array_equal(m.bins, np.zeros((2, 6), dtype=np.int64))


def test_build_maps_single_box_single_bin_patch():
    cam = identity_rig()
    r = DepthRange(1.0, 61.2, 16)
    box = Box3D(0.0, 0.0, 8.0, 3.0, 3.0, 3.0, 0.0)
    maps = build_sparse_depth_maps([box], [cam], r, 12, 4, keep_raw=True)
    bins = maps[0].bins
    nonzero = bins[bins > 0]
    assert nonzero.size > 0
    assert set(np.unique(nonzero)) == {lid_bin(8.0, r)}
    # Nonzero region is a filled rectangle.
    rows, cols = np.nonzero(bins)
    patch = bins[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1]
    assert (patch > 0).all()


def test_build_maps_matches_composed_oracle():
    rng = np.random.default_rng(2)
    cams = [identity_rig()]
    r = DepthRange(1.0, 40.0, 16)
    from crossdtr.geometry import collect_valid_boxes

    for _ in range(50):
        boxes = []
        for _ in range(rng.integers(0, 6)):
            boxes.append(
                Box3D(rng.uniform(-6, 6), rng.uniform(-3, 3), rng.uniform(2, 39),
                      *rng.uniform(0.5, 4, size=3), rng.uniform(-3, 3),
                      int(rng.integers(0, 2)))
            )
        maps = build_sparse_depth_maps(boxes, cams, r, 12, 4)
        valid = collect_valid_boxes(boxes, cams[0], r)
        raw = rasterize_reference(valid, 12, 4, 96, 32)
        expected = np.zeros((4, 12), dtype=np.int64)
        for i in range(4):
            for j in range(12):
                if raw[i, j] > 0:
                    expected[i, j] = lid_bin_reference(raw[i, j], r.edges())
        np.testing.assert_array_equal(maps[0].bins, expected)


def test_union_bound_invariant():
    # Nonzero pixels equal exactly the union of the scaled, clamped boxes.
    rng = np.random.default_rng(3)
    boxes = []
    for _ in range(8):
        u0, v0 = rng.uniform(0, 70), rng.uniform(0, 20)
        rect = Box2D(u0, u0 + rng.uniform(2, 30), v0, v0 + rng.uniform(2, 12),
                     depth=rng.uniform(1, 50))
        boxes.append((rect, rect.depth))
    grid = rasterize(boxes, 12, 8, 96, 32)
    union = np.zeros((8, 12), dtype=bool)
    u = (np.arange(12) + 0.5) * 8.0
    v = (np.arange(8) + 0.5) * 4.0
    for rect, _ in boxes:
        union |= np.outer(
            (v >= rect.v_min) & (v < rect.v_max), (u >= rect.u_min) & (u < rect.u_max)
        )
    np.testing.assert_array_equal(grid > 0, union)


def test_pgm_round_trip(tmp_path):
    bins = np.zeros((4, 6), dtype=np.int64)
    bins[1, 2] = 3
    bins[3, 5] = 16
    m = SparseDepthMap(width=6, height=4, num_bins=16, bins=bins)
    path = tmp_path / "scene_cam0.pgm"
    write_pgm(path, m)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n6 4\n16\n")
    assert len(raw) == len(b"P5\n6 4\n16\n") + 2 * 24  # 16-bit samples
    back = read_pgm(path)
    np.testing.assert_array_equal(back.bins, bins)
    assert back.num_bins == 16
    # Byte-identical on rewrite.
    write_pgm(tmp_path / "again.pgm", back)
    assert (tmp_path / "again.pgm").read_bytes() == raw


def test_discretize_keeps_background():
    raw = np.array([[0.0, 2.5], [9.9, 0.0]])
    bins = discretize(raw, R4)
    np.testing.assert_array_equal(bins, [[0, 2], [4, 0]])
