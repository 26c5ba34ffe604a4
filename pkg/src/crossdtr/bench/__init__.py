"""Synthetic benchmark: scene generation, rendering, detection metrics."""

from .metrics import (
    APResult,
    MetricReport,
    PRPoint,
    TPErrors,
    ap_at_threshold,
    build_report,
    mean_ap,
    ray_duplicate_count,
    tp_errors,
)
from .scenes import (
    CLASS_CAR,
    CLASS_COLORS,
    CLASS_NAMES,
    CLASS_PEDESTRIAN,
    CLASS_SIZE_PRIORS,
    Scene,
    SceneConfig,
    generate_scene,
    load_scene,
    occupancy_masks,
    render_images,
    ring_camera,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)

__all__ = [
    "APResult",
    "CLASS_CAR",
    "CLASS_COLORS",
    "CLASS_NAMES",
    "CLASS_PEDESTRIAN",
    "CLASS_SIZE_PRIORS",
    "MetricReport",
    "PRPoint",
    "Scene",
    "SceneConfig",
    "TPErrors",
    "ap_at_threshold",
    "build_report",
    "generate_scene",
    "load_scene",
    "mean_ap",
    "occupancy_masks",
    "ray_duplicate_count",
    "render_images",
    "ring_camera",
    "save_scene",
    "scene_from_dict",
    "scene_to_dict",
    "tp_errors",
]
