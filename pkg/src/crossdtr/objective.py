"""Training objective: focal classification, L1 box regression, depth
distribution loss, and Hungarian bipartite matching.

The regression parameter space is the 8-vector (normalized center xyz,
log sides, sin yaw, cos yaw); both the matching cost and the L1 loss live
there. L1 distances sum over the 8 components and average over matched
pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .geometry import Box3D
from .network.config import SceneBounds
from .network.model import DetectionSet, LayerOutput
from .tensor import (
    Tensor,
    absolute,
    add,
    clamp_min,
    concat,
    log,
    matmul,
    mean,
    mul,
    neg,
    powc,
    sigmoid,
    softmax,
    sub,
    sum_,
)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_FLOOR = 1e-12

# How many focal-loss probabilities have been clamped at the floor so far.
_clamp_warnings = 0


def clamp_warning_count() -> int:
    return _clamp_warnings


def reset_clamp_warnings() -> None:
    global _clamp_warnings
    _clamp_warnings = 0


@dataclass
class LossWeights:
    alpha_class: float = 2.0
    alpha_reg: float = 0.25
    alpha_ddn: float = 1.0

    def __post_init__(self):
        if min(self.alpha_class, self.alpha_reg, self.alpha_ddn) < 0:
            raise ConfigurationError("loss weights must be nonnegative")


@dataclass
class Assignment:
    """Matched (prediction, ground truth) pairs plus unmatched predictions."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched: list[int] = field(default_factory=list)


def focal_loss(p_t, alpha=FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> Tensor:
    """Elementwise -alpha * (1 - p_t)^gamma * log(p_t).

    Probabilities at or below zero are clamped to 1e-12 and counted in the
    module's warning counter. ``alpha`` may be an array for class-balanced
    weighting.
    """
    global _clamp_warnings
    p_t = p_t if isinstance(p_t, Tensor) else Tensor(p_t)
    _clamp_warnings += int((p_t.data < PROB_FLOOR).sum())
    p = clamp_min(p_t, PROB_FLOOR)
    modulation = powc(sub(Tensor(np.asarray(1.0, dtype=p.data.dtype)), p), gamma)
    alpha_arr = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=p.data.dtype)
    return mul(mul(modulation, neg(log(p))), Tensor(alpha_arr))


def ddn_loss(logits: Tensor, targets, alpha=FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> Tensor:
    """Mean per-pixel focal loss of softmaxed depth logits vs target bins.

    ``logits`` is [N, K+1, H_d, W_d]; ``targets`` is a list of sparse depth
    maps or an int array [N, H_d, W_d] with background as class 0. Averages
    over the pixels of each camera, then over cameras.
    """
    if hasattr(targets[0], "bins"):
        bins = np.stack([t.bins for t in targets])
    else:
        bins = np.asarray(targets)
    n, num_classes, h_d, w_d = logits.shape
    if bins.shape != (n, h_d, w_d):
        raise DataError(f"target shape {bins.shape} != logits spatial shape {(n, h_d, w_d)}")
    if bins.min() < 0 or bins.max() >= num_classes:
        raise DataError(f"target bins must lie in [0, {num_classes - 1}]")
    one_hot = np.zeros((n, num_classes, h_d, w_d), dtype=logits.data.dtype)
    np.put_along_axis(one_hot, bins[:, None], 1.0, axis=1)
    probs = softmax(logits, axis=1)
    p_t = sum_(mul(probs, Tensor(one_hot)), axis=1)  # [N, H_d, W_d]
    return mean(focal_loss(p_t, alpha=alpha, gamma=gamma))


def encode_box(box: Box3D, bounds: SceneBounds) -> np.ndarray:
    """Map a box to the 8-dim regression parameter space."""
    center = (box.center - bounds.lo) / bounds.extent
    return np.concatenate(
        [
            center,
            np.log([box.l, box.w, box.h]),
            [math.sin(box.theta), math.cos(box.theta)],
        ]
    )


def encoded_params(raw: LayerOutput) -> Tensor:
    """Predicted regression parameters [Q, 8], differentiable."""
    return concat([raw.center_norm, raw.size_log, raw.yaw_sincos], axis=1)


def match_cost(pred: DetectionSet, query: int, gt: Box3D, w: LossWeights,
               bounds: SceneBounds) -> float:
    """Cost of assigning one query's prediction to one ground-truth box."""
    class_term = -float(pred.class_probs[query, gt.class_id])
    enc_pred = encoded_params(pred.raw).data[query] if pred.raw is not None else None
    if enc_pred is None:
        raise DataError("match_cost needs raw head outputs on the DetectionSet")
    reg_term = float(np.abs(enc_pred - encode_box(gt, bounds)).sum())
    return w.alpha_class * class_term + w.alpha_reg * reg_term


def match_cost_matrix(pred: DetectionSet, gts: list[Box3D], w: LossWeights,
                      bounds: SceneBounds) -> np.ndarray:
    """All pairwise costs [num_queries, num_gt]; same formula as match_cost."""
    enc_pred = encoded_params(pred.raw).data.astype(np.float64)
    enc_gt = np.stack([encode_box(g, bounds) for g in gts])
    reg = np.abs(enc_pred[:, None, :] - enc_gt[None, :, :]).sum(axis=2)
    cls = -pred.class_probs[:, [g.class_id for g in gts]]
    return w.alpha_class * cls + w.alpha_reg * reg


def _solve_rectangular(cost: np.ndarray) -> list[tuple[int, int]]:
    """Jonker-Volgenant shortest augmenting paths; rows must be <= cols.

    Ties during the search break toward lower column indices, which keeps the
    result deterministic.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    assigned_row = np.zeros(m + 1, dtype=np.int64)  # column -> 1-based row
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        assigned_row[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = assigned_row[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            free_idx = np.flatnonzero(free)
            pick = free_idx[np.argmin(minv[1:][free_idx])]
            delta = minv[pick + 1]
            u[assigned_row[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = pick + 1
            if assigned_row[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            assigned_row[j0] = assigned_row[j1]
            j0 = j1
    return [(int(assigned_row[j] - 1), j - 1) for j in range(1, m + 1) if assigned_row[j] != 0]


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost partial injection of size min(P, G)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DataError(f"cost must be a matrix, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise DataError("cost matrix contains NaN")
    p, g = cost.shape
    if p == 0 or g == 0:
        return Assignment(pairs=[], unmatched=list(range(p)))
    if p <= g:
        pairs = _solve_rectangular(cost)
    else:
        pairs = [(r, c) for c, r in _solve_rectangular(cost.T)]
    pairs.sort()
    matched = {r for r, _ in pairs}
    return Assignment(pairs=pairs, unmatched=[q for q in range(p) if q not in matched])


def detection_loss_parts(
    pred: DetectionSet,
    gts: list[Box3D],
    w: LossWeights,
    bounds: SceneBounds,
    focal_alpha: float = FOCAL_ALPHA,
    focal_gamma: float = FOCAL_GAMMA,
    assignment: Assignment | None = None,
) -> tuple[Tensor, Tensor, Assignment]:
    """Unweighted (L_class, L_reg, assignment) for one decoder layer.

    Matched queries target their ground-truth class; unmatched queries target
    background (all class probabilities low). With no ground truth the
    regression term is zero and the classification term is pure background.
    A precomputed assignment can be passed to hold the matching fixed.
    """
    if pred.raw is None:
        raise DataError("detection_loss needs raw head outputs on the DetectionSet")
    raw = pred.raw
    num_queries, num_classes = raw.class_logits.shape

    if assignment is None:
        if gts:
            assignment = hungarian(match_cost_matrix(pred, gts, w, bounds))
        else:
            assignment = Assignment(pairs=[], unmatched=list(range(num_queries)))

    # Classification: per-class sigmoid focal loss, alpha-balanced.
    targets = np.zeros((num_queries, num_classes), dtype=raw.class_logits.data.dtype)
    for q, g in assignment.pairs:
        targets[q, gts[g].class_id] = 1.0
    probs = sigmoid(raw.class_logits)
    t = Tensor(targets)
    p_t = add(mul(probs, t), mul(sub(Tensor(np.asarray(1.0, dtype=targets.dtype)), probs),
                                 Tensor(1.0 - targets)))
    alpha_t = focal_alpha * targets + (1.0 - focal_alpha) * (1.0 - targets)
    l_class = mean(focal_loss(p_t, alpha=alpha_t, gamma=focal_gamma))

    # Regression: mean over matched pairs of the 8-dim L1 distance.
    if assignment.pairs:
        enc_pred = encoded_params(raw)
        sel = np.zeros((len(assignment.pairs), num_queries), dtype=enc_pred.data.dtype)
        enc_gt = np.zeros((len(assignment.pairs), 8), dtype=enc_pred.data.dtype)
        for row, (q, g) in enumerate(assignment.pairs):
            sel[row, q] = 1.0
            enc_gt[row] = encode_box(gts[g], bounds)
        diff = sub(matmul(Tensor(sel), enc_pred), Tensor(enc_gt))
        l_reg = mean(sum_(absolute(diff), axis=1))
    else:
        l_reg = Tensor(np.asarray(0.0, dtype=raw.class_logits.data.dtype))

    return l_class, l_reg, assignment


def detection_loss(
    pred: DetectionSet,
    gts: list[Box3D],
    w: LossWeights,
    bounds: SceneBounds,
    focal_alpha: float = FOCAL_ALPHA,
    focal_gamma: float = FOCAL_GAMMA,
    assignment: Assignment | None = None,
) -> tuple[Tensor, Assignment]:
    """alpha_class * L_class + alpha_reg * L_reg plus the matching used."""
    l_class, l_reg, assignment = detection_loss_parts(
        pred, gts, w, bounds, focal_alpha, focal_gamma, assignment
    )
    total = add(mul(l_class, w.alpha_class), mul(l_reg, w.alpha_reg))
    return total, assignment


def total_loss(layer_losses: list[Tensor], ddn: Tensor | None, w: LossWeights) -> Tensor:
    """Deep supervision: mean of per-layer detection losses + alpha_ddn * ddn."""
    if not layer_losses:
        raise DataError("need at least one decoder layer loss")
    acc = layer_losses[0]
    for extra in layer_losses[1:]:
        acc = add(acc, extra)
    acc = mul(acc, 1.0 / len(layer_losses))
    if ddn is not None:
        acc = add(acc, mul(ddn, w.alpha_ddn))
    return acc
