"""Synthetic multi-camera scenes: generation, rendering, JSON round-trip.

Cameras sit at the rig origin in a ring, looking outward; boxes are sampled
on the ground plane inside at least one camera's usable view so every
annotation is in principle detectable. Rendering fills each visible box's
clamped 2D rectangle with a class color shaded by center depth (nearest box
wins overlaps), then adds uniform pixel noise — just enough signal to make
the toy task learnable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..depthmap import DepthRange, rasterize_with_index
from ..errors import DataError, GenerationError
from ..geometry import Box3D, CameraMatrix, collect_valid_boxes

CLASS_CAR = 0
CLASS_PEDESTRIAN = 1
CLASS_NAMES = {CLASS_CAR: "car", CLASS_PEDESTRIAN: "pedestrian"}
CLASS_COLORS = {CLASS_CAR: (0.85, 0.25, 0.15), CLASS_PEDESTRIAN: (0.2, 0.45, 0.9)}

# Mean (l, w, h) per class, meters.
CLASS_SIZE_PRIORS = {CLASS_CAR: (4.5, 1.9, 1.7), CLASS_PEDESTRIAN: (0.7, 0.7, 1.7)}

NOISE_AMPLITUDE = 0.05
GROUND_Z = -1.6


@dataclass
class SceneConfig:
    num_cameras: int = 2
    image_w: int = 96
    image_h: int = 32
    focal: float = 60.0
    box_count: tuple[int, int] = (2, 6)
    placement_depth: tuple[float, float] = (4.0, 28.0)
    pedestrian_fraction: float = 0.5
    size_jitter: float = 0.15
    min_separation: float = 1.0
    depth_range: DepthRange = field(default_factory=DepthRange)

    def __post_init__(self):
        if not 1 <= self.num_cameras <= 6:
            raise DataError(f"camera count must be in [1, 6], got {self.num_cameras}")
        if self.box_count[0] > self.box_count[1] or self.box_count[0] < 0:
            raise DataError(f"bad box count range {self.box_count}")


@dataclass
class Scene:
    scene_id: str
    cameras: list[CameraMatrix]
    boxes: list[Box3D]
    seed: int
    image_w: int
    image_h: int


def ring_camera(index: int, count: int, focal: float, image_w: int, image_h: int) -> CameraMatrix:
    """Outward-looking pinhole camera number ``index`` of an ``count``-camera ring."""
    phi = 2.0 * math.pi * index / count
    forward = np.array([math.cos(phi), math.sin(phi), 0.0])
    right = np.array([math.sin(phi), -math.cos(phi), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    R = np.stack([right, down, forward])
    K = np.array([[focal, 0.0, image_w / 2.0], [0.0, focal, image_h / 2.0], [0.0, 0.0, 1.0]])
    return CameraMatrix(np.hstack([K @ R, np.zeros((3, 1))]), image_w, image_h)


def _sample_box(rng: np.random.Generator, cfg: SceneConfig) -> Box3D:
    class_id = CLASS_PEDESTRIAN if rng.random() < cfg.pedestrian_fraction else CLASS_CAR
    base = np.asarray(CLASS_SIZE_PRIORS[class_id])
    l, w, h = base * rng.uniform(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter, size=3)
    radius = rng.uniform(*cfg.placement_depth)
    psi = rng.uniform(0.0, 2.0 * math.pi)
    return Box3D(
        radius * math.cos(psi),
        radius * math.sin(psi),
        GROUND_Z + h / 2.0,
        float(l), float(w), float(h),
        rng.uniform(-math.pi, math.pi),
        class_id,
    )


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> Scene:
    """Deterministic random scene; rejects colliding or invisible boxes.

    Raises GenerationError after 1000 rejected draws for a single box.
    """
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    cameras = [
        ring_camera(i, cfg.num_cameras, cfg.focal, cfg.image_w, cfg.image_h)
        for i in range(cfg.num_cameras)
    ]
    count = int(rng.integers(cfg.box_count[0], cfg.box_count[1] + 1))
    boxes: list[Box3D] = []
    for _ in range(count):
        for attempt in range(1000):
            candidate = _sample_box(rng, cfg)
            if any(
                np.linalg.norm(candidate.center - b.center) < cfg.min_separation for b in boxes
            ):
                continue
            if not any(collect_valid_boxes([candidate], cam, cfg.depth_range) for cam in cameras):
                continue
            boxes.append(candidate)
            break
        else:
            raise GenerationError(
                f"seed {seed}: could not place box {len(boxes) + 1}/{count} after 1000 tries"
            )
    return Scene(
        scene_id=f"scene_{seed:08d}",
        cameras=cameras,
        boxes=boxes,
        seed=seed,
        image_w=cfg.image_w,
        image_h=cfg.image_h,
    )


def _visible_boxes(scene: Scene, cam: CameraMatrix, depth_range: DepthRange):
    """(rect, depth, class_id) for each valid box, in input order."""
    out = []
    for box in scene.boxes:
        found = collect_valid_boxes([box], cam, depth_range)
        if found:
            rect, d_c = found[0]
            out.append((rect, d_c, box.class_id))
    return out


def occupancy_masks(scene: Scene, depth_range: DepthRange | None = None) -> list[np.ndarray]:
    """Per-camera boolean coverage masks at image resolution (pre-noise)."""
    depth_range = depth_range or DepthRange()
    masks = []
    for cam in scene.cameras:
        visible = _visible_boxes(scene, cam, depth_range)
        _, index = rasterize_with_index(
            [(rect, d) for rect, d, _ in visible], scene.image_w, scene.image_h,
            scene.image_w, scene.image_h,
        )
        masks.append(index >= 0)
    return masks


def render_images(scene: Scene, depth_range: DepthRange | None = None) -> np.ndarray:
    """[N, 3, H, W] float32 images in [0, 1]."""
    depth_range = depth_range or DepthRange()
    rng = np.random.default_rng([scene.seed, 0xC0FFEE])
    images = np.zeros((len(scene.cameras), 3, scene.image_h, scene.image_w), dtype=np.float32)
    for m, cam in enumerate(scene.cameras):
        visible = _visible_boxes(scene, cam, depth_range)
        _, index = rasterize_with_index(
            [(rect, d) for rect, d, _ in visible], scene.image_w, scene.image_h,
            scene.image_w, scene.image_h,
        )
        for i, (_, d_c, class_id) in enumerate(visible):
            mask = index == i
            if not mask.any():
                continue
            shade = 1.0 / (1.0 + d_c / 10.0)
            for ch, value in enumerate(CLASS_COLORS[class_id]):
                images[m, ch][mask] = value * shade
        noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE,
                            size=(3, scene.image_h, scene.image_w))
        images[m] = np.clip(images[m] + noise, 0.0, 1.0)
    return images


# ---------------------------------------------------------------------------
# JSON scene files


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "image_w": scene.image_w,
        "image_h": scene.image_h,
        "cameras": [[float(x) for x in cam.T.reshape(-1)] for cam in scene.cameras],
        "boxes": [
            {
                "x": b.x_c, "y": b.y_c, "z": b.z_c,
                "l": b.l, "w": b.w, "h": b.h,
                "theta": b.theta, "class_id": b.class_id,
            }
            for b in scene.boxes
        ],
        "seed": scene.seed,
    }


def scene_from_dict(d: dict) -> Scene:
    try:
        cameras = [
            CameraMatrix(np.asarray(row, dtype=np.float64).reshape(3, 4),
                         d["image_w"], d["image_h"])
            for row in d["cameras"]
        ]
        boxes = [
            Box3D(b["x"], b["y"], b["z"], b["l"], b["w"], b["h"], b["theta"],
                  int(b["class_id"]))
            for b in d["boxes"]
        ]
        return Scene(
            scene_id=d["scene_id"],
            cameras=cameras,
            boxes=boxes,
            seed=int(d["seed"]),
            image_w=int(d["image_w"]),
            image_h=int(d["image_h"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed scene record: {e}") from e


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n")


def load_scene(path) -> Scene:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid scene JSON: {e.msg}") from e
    return scene_from_dict(payload)
