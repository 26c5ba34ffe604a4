"""Learnable pipeline: stem, depth predictor, decoder, detection head."""

from .config import ModelConfig, SceneBounds
from .layers import (
    Attention,
    Conv2d,
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    Linear,
    LayerNorm,
    MLP,
    Module,
    positional_code_2d,
)
from .model import (
    BackboneStem,
    CrossDTRModel,
    DepthOutputs,
    DepthPredictor,
    DetectionHead,
    DetectionSet,
    LayerOutput,
    backprojected_ray_points,
    decode_layer_output,
    halton_points,
)

__all__ = [
    "Attention",
    "BackboneStem",
    "Conv2d",
    "CrossDTRModel",
    "DecoderLayer",
    "DepthOutputs",
    "DepthPredictor",
    "DetectionHead",
    "DetectionSet",
    "EncoderLayer",
    "FeedForward",
    "LayerNorm",
    "LayerOutput",
    "Linear",
    "MLP",
    "ModelConfig",
    "Module",
    "SceneBounds",
    "backprojected_ray_points",
    "decode_layer_output",
    "halton_points",
    "positional_code_2d",
]
