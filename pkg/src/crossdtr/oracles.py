"""Independent reference implementations used to cross-check the fast paths.

Everything here is deliberately written the slow, obvious way (explicit
loops, permutation enumeration, central finite differences) and shares no
code with the implementations it verifies. The self-check command and the
test suite both build on these.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .tensor.core import Tape, Tensor, backward


def finite_difference_gradients(
    f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradients of a re-evaluable scalar function.

    ``f`` must rebuild its value from the current contents of ``params``
    each call; parameters are perturbed in place and restored.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst error of reverse-mode gradients against central differences.

    The error is |analytic - numeric| / max(1, |analytic|, |numeric|), i.e.
    relative for O(1) gradients and absolute below that. When
    ``coords_per_param`` is given, only that many randomly chosen coordinates
    of each parameter are probed (for whole-model checks).
    """
    for p in params:
        p.grad = None
    with Tape():
        loss = f()
        backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        if coords_per_param is None or coords_per_param >= flat.size:
            coords = range(flat.size)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=coords_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
            worst = max(worst, err)
    return worst


def rasterize_reference(
    valid: list, w_d: int, h_d: int, image_w: int, image_h: int
) -> np.ndarray:
    """Per-pixel brute force: loop every box at every pixel, keep the nearest."""
    grid = np.zeros((h_d, w_d))
    for i in range(h_d):
        for j in range(w_d):
            u = (j + 0.5) * image_w / w_d
            v = (i + 0.5) * image_h / h_d
            best = None
            for rect, d_c in valid:
                if rect.u_min <= u < rect.u_max and rect.v_min <= v < rect.v_max:
                    if best is None or d_c < best:
                        best = d_c
            if best is not None:
                grid[i, j] = best
    return grid


def lid_bin_reference(d: float, edges: np.ndarray) -> int:
    """Scan explicit bin edges for the interval containing d (last bin closed)."""
    for i in range(1, len(edges)):
        if edges[i - 1] <= d < edges[i]:
            return i
    if d == edges[-1]:
        return len(edges) - 1
    raise ValueError(f"depth {d} outside edges")


def hungarian_reference(cost: np.ndarray) -> float:
    """Minimum assignment cost by enumerating all size-min(P,G) injections."""
    cost = np.asarray(cost, dtype=float)
    p, g = cost.shape
    best = math.inf
    if p <= g:
        for cols in itertools.permutations(range(g), p):
            total = sum(cost[i, c] for i, c in enumerate(cols))
            best = min(best, total)
    else:
        for rows in itertools.permutations(range(p), g):
            total = sum(cost[r, j] for j, r in enumerate(rows))
            best = min(best, total)
    return best


def ap_reference(
    predictions: list[tuple[float, int, float, float]],
    ground_truth: list[tuple[int, float, float]],
    class_id: int,
    dist_threshold: float,
    min_recall: float = 0.1,
    min_precision: float = 0.1,
) -> float:
    """Straightforward AP: (score, scene, x, y) preds vs (scene, x, y) GT.

    Greedy match in descending score order against the nearest unmatched GT
    of the same scene within the threshold, then the clipped/rescaled area
    under the 101-point interpolated precision envelope. ``class_id`` is
    accepted for signature parity; callers pre-filter by class.
    """
    del class_id
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i][0])
    taken = [False] * len(ground_truth)
    tp_flags = []
    for idx in order:
        _, scene, px, py = predictions[idx]
        best_j, best_d = -1, dist_threshold
        for j, (g_scene, gx, gy) in enumerate(ground_truth):
            if taken[j] or g_scene != scene:
                continue
            d = math.hypot(px - gx, py - gy)
            if d <= best_d:
                best_j, best_d = j, d
        if best_j >= 0:
            taken[best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    n_gt = len(ground_truth)
    if n_gt == 0:
        return 0.0
    recalls, precisions = [], []
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        tp += int(flag)
        recalls.append(tp / n_gt)
        precisions.append(tp / k)
    grid = np.linspace(0.0, 1.0, 101)
    area = 0.0
    for r in grid:
        if r <= min_recall:
            continue
        envelope = 0.0
        for rec, prec in zip(recalls, precisions):
            if rec >= r:
                envelope = max(envelope, prec)
        area += max(envelope - min_precision, 0.0) * 0.01
    return area / ((1.0 - min_recall) * (1.0 - min_precision))
