"""Built-in verification suites: gradient checks against central finite
differences, rasterization against a per-pixel brute force, Hungarian against
permutation enumeration, LID round-trips, and AP against an independent
matcher. ``crossdtr selfcheck`` runs everything and fails loudly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import objective
from .bench.metrics import ap_at_threshold, detection_set_from_boxes
from .bench.scenes import SceneConfig, generate_scene
from .depthmap import DepthRange, build_sparse_depth_maps, lid_bin, lid_depth
from .geometry import Box3D, collect_valid_boxes
from .network.config import ModelConfig, SceneBounds
from .network.model import CrossDTRModel, decode_layer_output
from .objective import LossWeights, ddn_loss, detection_loss, hungarian
from .oracles import (
    ap_reference,
    gradient_check,
    hungarian_reference,
    lid_bin_reference,
    rasterize_reference,
)
from .tensor import AttentionProjections, Tensor, dtype_scope, ops


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


@dataclass
class SelfCheckReport:
    results: list[SuiteResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]


def _t64(rng, shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True, dtype=np.float64)


def check_gradients_per_op(tolerance: float = 1e-4) -> SuiteResult:
    rng = np.random.default_rng(1001)
    worst = 0.0
    with dtype_scope("float64"):
        a, b = _t64(rng, (4, 5)), _t64(rng, (5, 3))
        worst = max(worst, gradient_check(lambda: ops.sum_(ops.matmul(a, b)), [a, b]))

        x = _t64(rng, (6,))
        worst = max(
            worst,
            gradient_check(
                lambda: ops.sum_(ops.mul(ops.softmax(x, -1), ops.softmax(x, -1))), [x]
            ),
        )

        img, ker = _t64(rng, (1, 2, 5, 4)), _t64(rng, (2, 2, 3, 3))
        worst = max(
            worst,
            gradient_check(lambda: ops.sum_(ops.conv2d(img, ker, stride=2, padding=1)),
                           [img, ker]),
        )

        c = 8
        proj = AttentionProjections(
            wq=_t64(rng, (c, c), 0.5), wk=_t64(rng, (c, c), 0.5),
            wv=_t64(rng, (c, c), 0.5), wo=_t64(rng, (c, c), 0.5),
            bq=_t64(rng, (c,), 0.1), bk=_t64(rng, (c,), 0.1),
            bv=_t64(rng, (c,), 0.1), bo=_t64(rng, (c,), 0.1),
        )
        q, k, v = _t64(rng, (3, c)), _t64(rng, (4, c)), _t64(rng, (4, c))
        worst = max(
            worst,
            gradient_check(
                lambda: ops.sum_(ops.multi_head_attention(q, k, v, 2, proj)),
                [q, k, v] + proj.tensors(),
            ),
        )

        xs, gain, bias = _t64(rng, (3, 6)), _t64(rng, (6,), 0.5), _t64(rng, (6,), 0.1)
        worst = max(
            worst,
            gradient_check(
                lambda: ops.sum_(ops.mul(ops.layer_norm(xs, gain, bias),
                                         ops.layer_norm(xs, gain, bias))),
                [xs, gain, bias],
            ),
        )
    return SuiteResult(
        "gradient_per_op", worst < tolerance, f"max rel err {worst:.2e} (tol {tolerance:g})"
    )


def _toy_setup():
    cfg = ModelConfig(
        embed_dim=8,
        encoder_layers=1,
        decoder_layers=2,
        heads=2,
        num_queries=4,
        num_classes=2,
        depth_range=DepthRange(1.0, 30.0, 4),
        feature_stride=16,
        scene_bounds=SceneBounds((-35.0, -35.0, -3.0), (35.0, 35.0, 3.0)),
    )
    scene = generate_scene(
        7, SceneConfig(num_cameras=2, image_w=32, image_h=16, box_count=(2, 2),
                       placement_depth=(4.0, 20.0))
    )
    return cfg, scene


def check_gradient_end_to_end(tolerance: float = 1e-3) -> SuiteResult:
    from .bench.scenes import render_images

    cfg, scene = _toy_setup()
    weights = LossWeights()
    with dtype_scope("float64"):
        model = CrossDTRModel(cfg, np.random.default_rng(5))
        images = render_images(scene, cfg.depth_range).astype(np.float64)
        maps = build_sparse_depth_maps(
            scene.boxes, scene.cameras, cfg.depth_range,
            scene.image_w // cfg.feature_stride, scene.image_h // cfg.feature_stride,
        )
        bins = np.stack([m.bins for m in maps])

        # Freeze the bipartite matching at the base point so finite
        # differences probe a smooth function.
        base_outputs, _ = model.forward(images, scene.cameras)
        assignments = []
        for out in base_outputs:
            det = decode_layer_output(out, cfg.scene_bounds)
            _, assign = detection_loss(det, scene.boxes, weights, cfg.scene_bounds)
            assignments.append(assign)

        def loss_fn():
            outputs, depth_out = model.forward(images, scene.cameras)
            layer_losses = []
            for out, assign in zip(outputs, assignments):
                det = decode_layer_output(out, cfg.scene_bounds)
                loss, _ = detection_loss(det, scene.boxes, weights, cfg.scene_bounds,
                                         assignment=assign)
                layer_losses.append(loss)
            ddn = ddn_loss(depth_out.logits, bins)
            return objective.total_loss(layer_losses, ddn, weights)

        err = gradient_check(
            loss_fn, model.parameters(), coords_per_param=5,
            rng=np.random.default_rng(99),
        )
    return SuiteResult(
        "gradient_end_to_end", err < tolerance, f"max rel err {err:.2e} (tol {tolerance:g})"
    )


def check_rasterizer(num_scenes: int = 100) -> SuiteResult:
    r = DepthRange(1.0, 40.0, 16)
    cfg = SceneConfig(num_cameras=2, box_count=(0, 6), depth_range=r)
    w_d, h_d = 12, 4
    for seed in range(num_scenes):
        scene = generate_scene(10_000 + seed, cfg)
        maps = build_sparse_depth_maps(scene.boxes, scene.cameras, r, w_d, h_d)
        for cam, built in zip(scene.cameras, maps):
            valid = collect_valid_boxes(scene.boxes, cam, r)
            raw = rasterize_reference(valid, w_d, h_d, cam.image_w, cam.image_h)
            expected = np.zeros((h_d, w_d), dtype=np.int64)
            for i in range(h_d):
                for j in range(w_d):
                    if raw[i, j] > 0:
                        expected[i, j] = lid_bin_reference(raw[i, j], r.edges())
            if not np.array_equal(built.bins, expected):
                return SuiteResult(
                    "sparse_depth_rasterizer", False,
                    f"mismatch on scene seed {scene.seed}",
                )
    return SuiteResult("sparse_depth_rasterizer", True, f"{num_scenes} scenes identical")


def check_hungarian(trials: int = 20, size: int = 7) -> SuiteResult:
    rng = np.random.default_rng(42)
    for t in range(trials):
        cost = rng.uniform(-5, 5, size=(size, size))
        assign = hungarian(cost)
        got = sum(cost[i, j] for i, j in assign.pairs)
        want = hungarian_reference(cost)
        if abs(got - want) > 1e-9:
            return SuiteResult(
                "hungarian_brute_force", False,
                f"trial {t}: cost {got:.12g} != brute force {want:.12g}",
            )
    return SuiteResult("hungarian_brute_force", True, f"{trials} random {size}x{size} matrices")


def check_lid() -> SuiteResult:
    for r in (DepthRange(0.0, 10.0, 4), DepthRange(1.0, 61.2, 16), DepthRange(2.0, 50.0, 64)):
        for i in range(1, r.num_bins + 1):
            if lid_bin(lid_depth(i, r), r) != i:
                return SuiteResult("lid_round_trip", False, f"bin {i} of {r} fails round trip")
        widths = np.diff(r.edges())
        if not (np.diff(widths) > 0).all():
            return SuiteResult("lid_round_trip", False, f"bin widths not increasing for {r}")
    return SuiteResult("lid_round_trip", True, "round trip + monotone widths on 3 ranges")


def check_ap_metric() -> SuiteResult:
    gts = [
        Box3D(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0, 0),
        Box3D(10.0, 2.0, 0.0, 4.0, 2.0, 1.5, 0.2, 0),
        Box3D(-8.0, -5.0, 0.0, 4.0, 2.0, 1.5, -0.4, 0),
    ]
    # 5 predictions: 2 accurate, 1 borderline, 2 clear false positives.
    pred_boxes = [
        Box3D(0.2, 0.1, 0.0, 4.0, 2.0, 1.5, 0.0, 0),
        Box3D(10.4, 2.2, 0.0, 4.0, 2.0, 1.5, 0.2, 0),
        Box3D(-8.0, -6.2, 0.0, 4.0, 2.0, 1.5, -0.4, 0),
        Box3D(20.0, 20.0, 0.0, 4.0, 2.0, 1.5, 0.0, 0),
        Box3D(-20.0, 15.0, 0.0, 4.0, 2.0, 1.5, 0.0, 0),
    ]
    scores = [0.95, 0.9, 0.6, 0.5, 0.3]
    det = detection_set_from_boxes(pred_boxes, scores)
    for threshold in (0.5, 1.0, 2.0, 4.0):
        got = ap_at_threshold([det], [gts], class_id=0, dist_threshold=threshold).ap
        want = ap_reference(
            [(s, 0, b.x_c, b.y_c) for s, b in zip(scores, pred_boxes)],
            [(0, g.x_c, g.y_c) for g in gts],
            class_id=0,
            dist_threshold=threshold,
        )
        if abs(got - want) > 1e-9:
            return SuiteResult(
                "ap_metric_oracle", False,
                f"threshold {threshold}: {got:.12g} != oracle {want:.12g}",
            )
    exact = detection_set_from_boxes(gts, [0.9, 0.8, 0.7])
    if ap_at_threshold([exact], [gts], 0, 0.5).ap != 1.0:
        return SuiteResult("ap_metric_oracle", False, "exact predictions did not give AP 1")
    empty = detection_set_from_boxes([], [])
    if ap_at_threshold([empty], [gts], 0, 4.0).ap != 0.0:
        return SuiteResult("ap_metric_oracle", False, "no predictions did not give AP 0")
    return SuiteResult("ap_metric_oracle", True, "4 thresholds equal the independent matcher")


ALL_SUITES = (
    check_gradients_per_op,
    check_gradient_end_to_end,
    check_rasterizer,
    check_hungarian,
    check_lid,
    check_ap_metric,
)


def run_selfcheck(verbose: bool = True) -> SelfCheckReport:
    report = SelfCheckReport()
    start = time.perf_counter()
    for suite in ALL_SUITES:
        result = suite()
        report.results.append(result)
        if verbose:
            status = "PASS" if result.passed else "FAIL"
            print(f"[{status}] {result.name}: {result.detail}")
    report.elapsed = time.perf_counter() - start
    if verbose:
        print(f"selfcheck {'passed' if report.ok else 'FAILED'} in {report.elapsed:.1f}s")
    return report
