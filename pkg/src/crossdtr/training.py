"""Seed-deterministic training loop over synthetic scenes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .bench.scenes import Scene, render_images
from .depthmap import build_sparse_depth_maps
from .errors import DataError
from .network.config import ModelConfig
from .network.model import CrossDTRModel, decode_layer_output
from .objective import LossWeights, ddn_loss, detection_loss_parts, total_loss
from .tensor import AdamState, Tape, Tensor, adamw_step, backward, mul, zero_grads


@dataclass
class TrainSettings:
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 1
    batch_size: int = 1
    seed: int = 0
    deep_supervision: bool = True
    lr_schedule: str = "cosine"  # "cosine" decays to lr/100; "constant" keeps lr
    log_every: int = 1
    checkpoint_every: int = 0  # iterations; 0 = final checkpoint only

    def lr_at(self, iteration: int, total_iterations: int) -> float:
        if self.lr_schedule == "constant" or total_iterations <= 1:
            return self.lr
        if self.lr_schedule != "cosine":
            raise DataError(f"unknown lr schedule {self.lr_schedule!r}")
        progress = min(iteration / (total_iterations - 1), 1.0)
        floor = self.lr * 0.01
        return floor + (self.lr - floor) * 0.5 * (1.0 + np.cos(np.pi * progress))


@dataclass
class SceneSample:
    """Everything the loop needs for one scene, precomputed once."""

    scene: Scene
    images: np.ndarray
    depth_bins: np.ndarray  # [N, H_d, W_d]


@dataclass
class LogRow:
    iteration: int
    l_class: float
    l_reg: float
    l_ddn: float
    l_total: float


@dataclass
class TrainResult:
    log: list[LogRow] = field(default_factory=list)

    @property
    def final(self) -> Optional[LogRow]:
        return self.log[-1] if self.log else None


LOG_HEADER = ["iter", "L_class", "L_reg", "L_ddn", "L_total"]


def prepare_scene(scene: Scene, config: ModelConfig) -> SceneSample:
    w_d = scene.image_w // config.feature_stride
    h_d = scene.image_h // config.feature_stride
    maps = build_sparse_depth_maps(
        scene.boxes, scene.cameras, config.depth_range, w_d, h_d
    )
    return SceneSample(
        scene=scene,
        images=render_images(scene, config.depth_range),
        depth_bins=np.stack([m.bins for m in maps]),
    )


def write_log_csv(path, rows: list[LogRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_HEADER)
        for r in rows:
            writer.writerow(
                [r.iteration, f"{r.l_class:.9g}", f"{r.l_reg:.9g}",
                 f"{r.l_ddn:.9g}", f"{r.l_total:.9g}"]
            )


def train_model(
    model: CrossDTRModel,
    scenes: list[Scene],
    weights: LossWeights,
    settings: TrainSettings,
    on_checkpoint: Optional[Callable[[int], None]] = None,
    max_iterations: Optional[int] = None,
) -> TrainResult:
    """Optimize the model in place; returns the per-iteration loss log.

    One iteration consumes ``batch_size`` scenes (losses averaged). Scene
    order reshuffles every epoch from the settings seed, so two runs with the
    same config are bit-identical.
    """
    if not scenes:
        raise DataError("no training scenes")
    cfg = model.cfg
    samples = [prepare_scene(s, cfg) for s in scenes]
    params = model.parameters()
    state = AdamState.init(params)
    order_rng = np.random.default_rng([settings.seed, 0x7121])
    result = TrainResult()
    iteration = 0
    use_ddn = weights.alpha_ddn > 0
    batches_per_epoch = -(-len(scenes) // settings.batch_size)
    total_iterations = settings.epochs * batches_per_epoch
    if max_iterations is not None:
        total_iterations = min(total_iterations, max_iterations)

    for _ in range(settings.epochs):
        order = order_rng.permutation(len(samples))
        for start in range(0, len(order), settings.batch_size):
            batch = [samples[i] for i in order[start : start + settings.batch_size]]
            zero_grads(params)
            cls_vals, reg_vals, ddn_vals = [], [], []
            with Tape():
                batch_terms = []
                for sample in batch:
                    outputs, depth_out = model.forward(
                        sample.images, sample.scene.cameras, need_depth_logits=use_ddn
                    )
                    if not settings.deep_supervision:
                        outputs = outputs[-1:]
                    layer_losses = []
                    for out in outputs:
                        det = decode_layer_output(out, cfg.scene_bounds)
                        l_class, l_reg, _ = detection_loss_parts(
                            det, sample.scene.boxes, weights, cfg.scene_bounds
                        )
                        layer_losses.append(
                            mul(l_class, weights.alpha_class) + mul(l_reg, weights.alpha_reg)
                        )
                        cls_vals.append(l_class.item())
                        reg_vals.append(l_reg.item())
                    ddn = None
                    if use_ddn:
                        ddn = ddn_loss(depth_out.logits, sample.depth_bins)
                        ddn_vals.append(ddn.item())
                    batch_terms.append(total_loss(layer_losses, ddn, weights))
                total = batch_terms[0]
                for t in batch_terms[1:]:
                    total = total + t
                total = mul(total, 1.0 / len(batch_terms))
                value = total.item()
                if not np.isfinite(value):
                    ids = [s.scene.scene_id for s in batch]
                    seeds = [s.scene.seed for s in batch]
                    raise DataError(
                        f"non-finite loss {value} at iteration {iteration} "
                        f"on scenes {ids} (seeds {seeds})"
                    )
                backward(total)
            adamw_step(
                params, state,
                lr=settings.lr_at(iteration, total_iterations),
                betas=settings.betas, weight_decay=settings.weight_decay,
            )
            iteration += 1
            result.log.append(
                LogRow(
                    iteration=iteration,
                    l_class=float(np.mean(cls_vals)),
                    l_reg=float(np.mean(reg_vals)),
                    l_ddn=float(np.mean(ddn_vals)) if ddn_vals else 0.0,
                    l_total=value,
                )
            )
            if on_checkpoint and settings.checkpoint_every and iteration % settings.checkpoint_every == 0:
                on_checkpoint(iteration)
            if max_iterations is not None and iteration >= max_iterations:
                return result
    return result


def predict_scenes(model: CrossDTRModel, scenes: list[Scene]):
    """Last-decoder-layer detections for each scene (inference, no tape)."""
    out = []
    for scene in scenes:
        sets, _ = model.detect(render_images(scene, model.cfg.depth_range), scene.cameras)
        out.append(sets[-1])
    return out
