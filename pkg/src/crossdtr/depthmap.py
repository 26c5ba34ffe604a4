"""Object-wise sparse depth maps: nearest-object rasterization + LID binning.

Depth bins follow linear-increasing discretization (LID): bin widths grow
linearly with index, so resolution is finest near the camera. With
delta = 2 (d_max - d_min) / (K (K + 1)), the boundary edges are
edge_i = d_min + delta * i (i + 1) / 2 for i = 0..K.

Bin 0 is reserved for background (no object covers the pixel); object bins
run 1..K, so depth classification has K + 1 categories.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DataError, UsageError
from .geometry import Box2D, collect_valid_boxes

BACKGROUND_BIN = 0


@dataclass(frozen=True)
class DepthRange:
    """Metric depth window [d_min, d_max] split into num_bins LID intervals."""

    d_min: float = 1.0
    d_max: float = 61.2
    num_bins: int = 16

    def __post_init__(self):
        if not (0 <= self.d_min < self.d_max):
            raise ConfigurationError(f"need 0 <= d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if self.num_bins < 2:
            raise ConfigurationError(f"need at least 2 depth bins, got {self.num_bins}")

    @property
    def delta(self) -> float:
        return 2.0 * (self.d_max - self.d_min) / (self.num_bins * (self.num_bins + 1))

    def edges(self) -> np.ndarray:
        i = np.arange(self.num_bins + 1, dtype=np.float64)
        return self.d_min + self.delta * i * (i + 1) / 2.0


@dataclass
class SparseDepthMap:
    """Feature-resolution grid of LID bin indices (0 = background)."""

    width: int
    height: int
    num_bins: int
    bins: np.ndarray
    raw: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.int64)
        if self.bins.shape != (self.height, self.width):
            raise DataError(f"bin grid shape {self.bins.shape} != ({self.height}, {self.width})")
        if self.bins.min(initial=0) < 0 or self.bins.max(initial=0) > self.num_bins:
            raise DataError(f"bin indices must lie in [0, {self.num_bins}]")


def lid_bin(d: float, r: DepthRange) -> int:
    """LID bin index in [1, K] of a metric depth inside the range."""
    if not (r.d_min <= d <= r.d_max):
        raise DataError(f"depth {d} outside [{r.d_min}, {r.d_max}]")
    idx = 1 + math.floor(-0.5 + 0.5 * math.sqrt(1.0 + 8.0 * (d - r.d_min) / r.delta))
    return min(max(idx, 1), r.num_bins)


def lid_bin_array(d: np.ndarray, r: DepthRange) -> np.ndarray:
    """Vectorized lid_bin for depths already known to be in range."""
    idx = 1 + np.floor(-0.5 + 0.5 * np.sqrt(1.0 + 8.0 * (d - r.d_min) / r.delta))
    return np.clip(idx, 1, r.num_bins).astype(np.int64)


def lid_depth(bin_index: int, r: DepthRange) -> float:
    """Midpoint depth of an object bin (bin 0 is background, not a depth)."""
    if bin_index == BACKGROUND_BIN:
        raise UsageError("bin 0 is the background sentinel and has no representative depth")
    if not (1 <= bin_index <= r.num_bins):
        raise UsageError(f"bin {bin_index} outside [1, {r.num_bins}]")
    edges = r.edges()
    return float((edges[bin_index - 1] + edges[bin_index]) / 2.0)


def rasterize_with_index(
    valid: list[tuple[Box2D, float]], w_d: int, h_d: int, image_w: int, image_h: int
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-object rasterization, also returning which box won each pixel.

    Feature pixel (i, j) samples the image at ((j+.5) * image_w / w_d,
    (i+.5) * image_h / h_d). Coverage is closed on u_min/v_min and open on
    u_max/v_max; overlaps resolve to the smallest center depth, ties to the
    lowest box index. Returns (raw depth grid with 0 background, index grid
    with -1 background).
    """
    depth = np.full((h_d, w_d), np.inf)
    index = np.full((h_d, w_d), -1, dtype=np.int64)
    u = (np.arange(w_d) + 0.5) * (image_w / w_d)
    v = (np.arange(h_d) + 0.5) * (image_h / h_d)
    for i, (rect, d_c) in enumerate(valid):
        cols = (u >= rect.u_min) & (u < rect.u_max)
        rows = (v >= rect.v_min) & (v < rect.v_max)
        mask = np.outer(rows, cols)
        closer = mask & (d_c < depth)
        depth[closer] = d_c
        index[closer] = i
    depth[index < 0] = 0.0
    return depth, index


def rasterize(
    valid: list[tuple[Box2D, float]], w_d: int, h_d: int, image_w: int, image_h: int
) -> np.ndarray:
    """Raw object-wise depth grid in meters (0 where no box covers the pixel)."""
    return rasterize_with_index(valid, w_d, h_d, image_w, image_h)[0]


def discretize(raw: np.ndarray, r: DepthRange) -> np.ndarray:
    """Apply LID binning to a raw depth grid; background 0 stays 0."""
    bins = np.zeros(raw.shape, dtype=np.int64)
    covered = raw > 0
    if covered.any():
        bins[covered] = lid_bin_array(raw[covered], r)
    return bins


def build_sparse_depth_maps(
    boxes, cameras, r: DepthRange, w_d: int, h_d: int, keep_raw: bool = False
) -> list[SparseDepthMap]:
    """Per-camera sparse depth maps: visibility filter -> rasterize -> LID."""
    maps = []
    for cam in cameras:
        valid = collect_valid_boxes(boxes, cam, r)
        raw = rasterize(valid, w_d, h_d, cam.image_w, cam.image_h)
        maps.append(
            SparseDepthMap(
                width=w_d,
                height=h_d,
                num_bins=r.num_bins,
                bins=discretize(raw, r),
                raw=raw if keep_raw else None,
            )
        )
    return maps


# ---------------------------------------------------------------------------
# PGM export. Samples are always 16-bit big-endian ("P5" with maxval = K),
# even when K < 256; the reader below expects the same.


def write_pgm(path, depth_map: SparseDepthMap) -> None:
    header = f"P5\n{depth_map.width} {depth_map.height}\n{depth_map.num_bins}\n"
    payload = depth_map.bins.astype(">u2").tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def read_pgm(path) -> SparseDepthMap:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise DataError(f"{path}: not a P5 depth-map PGM")
    width, height, maxval = (int(m.group(k)) for k in (1, 2, 3))
    data = np.frombuffer(raw[m.end() :], dtype=">u2")
    if data.size != width * height:
        raise DataError(f"{path}: expected {width * height} samples, found {data.size}")
    return SparseDepthMap(
        width=width,
        height=height,
        num_bins=maxval,
        bins=data.reshape(height, width).astype(np.int64),
    )
