"""The full detector: stem, depth predictor, decoder stack, detection head.

The pipeline maps multi-view images straight to sets of 7-DoF boxes in the
ego frame. A lightweight depth predictor turns per-view features into
per-pixel depth-bin logits and low-dimensional depth embeddings; the decoder
lets 3D object queries attend first over depth embeddings from all cameras
(candidate areas) and then over image features keyed by 3D positional
embeddings; a shared head decodes every decoder layer's query state (deep
supervision).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..depthmap import lid_depth
from ..errors import ConfigurationError
from ..geometry import Box3D, CameraMatrix, wrap_angle
from ..tensor import Tensor, add, concat, relu, reshape, sigmoid, slice_axis, softmax, transpose
from .config import ModelConfig, SceneBounds
from .layers import Conv2d, DecoderLayer, EncoderLayer, MLP, Module, positional_code_2d


@dataclass
class DepthOutputs:
    """Per-camera depth-bin logits/probabilities and depth embeddings.

    Fields are None only when a partial pass was explicitly requested;
    ``CrossDTRModel.detect`` always fills logits and probs.
    """

    logits: Optional[Tensor]      # [N, K+1, H_d, W_d]
    probs: Optional[Tensor]       # softmax of logits over the bin axis
    embeddings: Optional[Tensor]  # [N, H_d*W_d, C]


@dataclass
class LayerOutput:
    """Differentiable head outputs for one decoder layer."""

    class_logits: Tensor  # [Q, num_classes]
    center_norm: Tensor   # [Q, 3], in (0, 1) relative to scene bounds
    size_log: Tensor      # [Q, 3], log of box sides in meters
    yaw_sincos: Tensor    # [Q, 2], unnormalized (sin, cos)


@dataclass
class DetectionSet:
    """Decoded, scored predictions for one scene (one decoder layer)."""

    boxes: list[Box3D]
    scores: np.ndarray       # [Q] max class probability
    class_ids: np.ndarray    # [Q] argmax class
    class_probs: np.ndarray  # [Q, num_classes]
    raw: Optional[LayerOutput] = None


def decode_layer_output(out: LayerOutput, bounds: SceneBounds) -> DetectionSet:
    """Decode head outputs to boxes. Yaw is atan2(sin, cos); atan2(0, 0) = 0."""
    centers = bounds.lo + out.center_norm.data * bounds.extent
    sizes = np.exp(out.size_log.data)
    yaw = np.arctan2(out.yaw_sincos.data[:, 0], out.yaw_sincos.data[:, 1])
    probs = 1.0 / (1.0 + np.exp(-out.class_logits.data.astype(np.float64)))
    class_ids = probs.argmax(axis=1)
    boxes = [
        Box3D(*centers[q], *sizes[q], wrap_angle(float(yaw[q])), int(class_ids[q]))
        for q in range(len(centers))
    ]
    return DetectionSet(
        boxes=boxes,
        scores=probs.max(axis=1),
        class_ids=class_ids,
        class_probs=probs,
        raw=out,
    )


def halton_points(n: int, dims: int = 3) -> np.ndarray:
    """First n points of the Halton low-discrepancy sequence in (0, 1)^dims."""
    primes = [2, 3, 5, 7, 11, 13][:dims]
    out = np.empty((n, dims))
    for d, base in enumerate(primes):
        for i in range(n):
            f, result, k = 1.0, 0.0, i + 1
            while k > 0:
                f /= base
                result += f * (k % base)
                k //= base
            out[i, d] = result
    return out


def backprojected_ray_points(
    cam: CameraMatrix, w_d: int, h_d: int, depth_range, stride_w: float, stride_h: float
) -> np.ndarray:
    """Ego-frame samples along each feature pixel's viewing ray, LID-spaced.

    Returns [h_d*w_d, K, 3], pixels flattened row-major. stride_w/stride_h
    map feature pixels back to image coordinates.
    """
    K = depth_range.num_bins
    u = (np.arange(w_d) + 0.5) * stride_w
    v = (np.arange(h_d) + 0.5) * stride_h
    uu, vv = np.meshgrid(u, v)  # [h_d, w_d]
    uv1 = np.stack([uu.ravel(), vv.ravel(), np.ones(w_d * h_d)])  # [3, L]
    depths = np.array([lid_depth(i, depth_range) for i in range(1, K + 1)])
    a_inv = np.linalg.inv(cam.T[:, :3])
    t = cam.T[:, 3]
    rays = np.einsum("ij,jl,k->lki", a_inv, uv1, depths)  # [L, K, 3] of A^-1 (d*uv1)
    return rays - (a_inv @ t)


class BackboneStem(Module):
    """Tiny strided convolution stack standing in for a real backbone."""

    def __init__(self, rng, cfg: ModelConfig):
        self.stride = cfg.feature_stride
        stages = int(np.log2(cfg.feature_stride))
        widths = [min(8 * 2**i, cfg.embed_dim) for i in range(stages - 1)] + [cfg.embed_dim]
        chans = [3] + widths
        self.convs = [
            Conv2d(rng, c_in, c_out, kernel=3, stride=2, padding=1)
            for c_in, c_out in zip(chans, chans[1:])
        ]

    def __call__(self, images: Tensor) -> Tensor:
        _, _, h, w = images.shape
        if h % self.stride or w % self.stride:
            raise ConfigurationError(
                f"image size {h}x{w} not divisible by feature stride {self.stride}"
            )
        x = images
        for conv in self.convs:
            x = relu(conv(x))
        return x


class DepthPredictor(Module):
    """Depth-bin logits from small convolutions; embeddings from an encoder.

    The encoder consumes the flattened feature pixels of each view plus a 2D
    positional code; with zero encoder layers the embeddings are exactly that
    base sequence.
    """

    def __init__(self, rng, cfg: ModelConfig):
        C, K = cfg.embed_dim, cfg.depth_range.num_bins
        self.conv1 = Conv2d(rng, C, C, kernel=3, padding=1)
        self.conv2 = Conv2d(rng, C, C, kernel=3, padding=1)
        self.conv_out = Conv2d(rng, C, K + 1, kernel=1)
        self.encoder = [
            EncoderLayer(rng, C, cfg.heads, cfg.ffn_hidden) for _ in range(cfg.encoder_layers)
        ]

    def __call__(
        self, feats: Tensor, need_logits: bool = True, need_embeddings: bool = True
    ) -> DepthOutputs:
        """Partial passes (training fast path) leave skipped fields as None."""
        n, c, h_d, w_d = feats.shape
        logits = probs = embeddings = None
        if need_logits:
            logits = self.conv_out(relu(self.conv2(relu(self.conv1(feats)))))
            probs = softmax(logits, axis=1)
        if need_embeddings:
            pos2d = Tensor(positional_code_2d(h_d, w_d, c))
            per_view = []
            for i in range(n):
                x = transpose(reshape(slice_axis(feats, 0, i, i + 1), (c, h_d * w_d)), (1, 0))
                x = add(x, pos2d)
                for layer in self.encoder:
                    x = layer(x)
                per_view.append(reshape(x, (1, h_d * w_d, c)))
            embeddings = concat(per_view, 0)
        return DepthOutputs(logits=logits, probs=probs, embeddings=embeddings)


class DetectionHead(Module):
    """Classification + box regression MLPs shared across decoder layers."""

    def __init__(self, rng, cfg: ModelConfig):
        C = cfg.embed_dim
        self.cls_mlp = MLP(rng, [C, cfg.head_hidden, cfg.num_classes])
        self.reg_mlp = MLP(rng, [C, cfg.head_hidden, 8])

    def __call__(self, x: Tensor, anchor_logits: Tensor) -> LayerOutput:
        raw = self.reg_mlp(x)
        delta = slice_axis(raw, 1, 0, 3)
        return LayerOutput(
            class_logits=self.cls_mlp(x),
            center_norm=sigmoid(add(anchor_logits, delta)),
            size_log=slice_axis(raw, 1, 3, 6),
            yaw_sincos=slice_axis(raw, 1, 6, 8),
        )


class CrossDTRModel(Module):
    """Multi-view detector with depth-guided decoding."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        C, K = cfg.embed_dim, cfg.depth_range.num_bins
        self.stem = BackboneStem(rng, cfg)
        self.depth_predictor = DepthPredictor(rng, cfg)
        self.pos3d_mlp = MLP(rng, [3 * K, 2 * C, C])
        self.query_pos_mlp = MLP(rng, [3, 2 * C, C])
        self.query_pos_mlp_view = MLP(rng, [3, 2 * C, C]) if cfg.separate_query_pos else None
        self.decoder = [
            DecoderLayer(
                rng, C, cfg.heads, cfg.ffn_hidden,
                self_attention=cfg.query_self_attention,
                cross_depth=cfg.use_cross_depth,
            )
            for _ in range(cfg.decoder_layers)
        ]
        self.head = DetectionHead(rng, cfg)
        anchors = np.clip(halton_points(cfg.num_queries, 3), 1e-4, 1 - 1e-4)
        self.anchor_logits = Tensor(
            np.log(anchors / (1.0 - anchors)), requires_grad=cfg.learnable_anchors
        )
        self.query_embed = Tensor(
            rng.normal(0.0, 0.5, size=(cfg.num_queries, C)), requires_grad=True
        )

    @property
    def anchors(self) -> np.ndarray:
        """Query reference points in [0, 1]^3 (normalized scene coordinates)."""
        return 1.0 / (1.0 + np.exp(-self.anchor_logits.data))

    def _positional_embedding_3d(self, cameras, w_d: int, h_d: int) -> Tensor:
        cfg = self.cfg
        bounds = cfg.scene_bounds
        chunks = []
        for cam in cameras:
            pts = backprojected_ray_points(
                cam, w_d, h_d, cfg.depth_range,
                stride_w=cam.image_w / w_d, stride_h=cam.image_h / h_d,
            )
            normalized = (pts - bounds.lo) / bounds.extent
            chunks.append(normalized.reshape(h_d * w_d, -1))
        flat = Tensor(np.concatenate(chunks, axis=0))  # [N*L, 3K]
        return self.pos3d_mlp(flat)

    def forward(
        self, images, cameras, need_depth_logits: bool = True
    ) -> tuple[list[LayerOutput], DepthOutputs]:
        """Differentiable pass; returns per-decoder-layer head outputs.

        ``need_depth_logits=False`` skips the depth-bin branch (useful when
        the depth loss weight is zero); depth embeddings are computed exactly
        when the decoder consumes them.
        """
        images = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
        n = images.shape[0]
        if len(cameras) != n:
            raise ConfigurationError(f"{n} images but {len(cameras)} cameras")
        feats = self.stem(images)
        _, c, h_d, w_d = feats.shape
        depth_out = self.depth_predictor(
            feats, need_logits=need_depth_logits, need_embeddings=self.cfg.use_cross_depth
        )

        view_values = concat(
            [
                transpose(reshape(slice_axis(feats, 0, i, i + 1), (c, h_d * w_d)), (1, 0))
                for i in range(n)
            ],
            axis=0,
        )  # [N*L, C]
        view_keys = add(view_values, self._positional_embedding_3d(cameras, w_d, h_d))
        depth_kv = (
            reshape(depth_out.embeddings, (n * h_d * w_d, c))
            if depth_out.embeddings is not None
            else None
        )

        anchors = sigmoid(self.anchor_logits)
        query_pos = self.query_pos_mlp(anchors)
        query_pos_view = (
            self.query_pos_mlp_view(anchors) if self.query_pos_mlp_view is not None else None
        )

        x = self.query_embed
        outputs = []
        for layer in self.decoder:
            x = layer(x, query_pos, depth_kv, view_keys, view_values, query_pos_view)
            outputs.append(self.head(x, self.anchor_logits))
        return outputs, depth_out

    def detect(self, images, cameras) -> tuple[list[DetectionSet], DepthOutputs]:
        """Decoded detections per decoder layer plus the depth outputs."""
        outputs, depth_out = self.forward(images, cameras)
        sets = [decode_layer_output(out, self.cfg.scene_bounds) for out in outputs]
        return sets, depth_out
