"""Model configuration, JSON-serializable alongside checkpoints."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..depthmap import DepthRange
from ..errors import ConfigurationError


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned region (meters) that decoded box centers live in."""

    min: tuple[float, float, float] = (-40.0, -40.0, -3.0)
    max: tuple[float, float, float] = (40.0, 40.0, 3.0)

    def __post_init__(self):
        if not all(lo < hi for lo, hi in zip(self.min, self.max)):
            raise ConfigurationError(f"scene bounds min {self.min} must be < max {self.max}")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.min, dtype=np.float64)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.max, dtype=np.float64) - self.lo

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lo) and np.all(p <= self.lo + self.extent))


@dataclass
class ModelConfig:
    """Architecture and geometry settings shared by every model component.

    The depth predictor and the 3D positional embedding share one
    ``depth_range``, which is what keeps their bin counts matched.
    """

    embed_dim: int = 32
    encoder_layers: int = 1
    decoder_layers: int = 3
    heads: int = 4
    num_queries: int = 64
    num_classes: int = 2
    depth_range: DepthRange = field(default_factory=DepthRange)
    feature_stride: int = 16
    head_hidden: int = 64
    ffn_hidden: int = 64
    scene_bounds: SceneBounds = field(default_factory=SceneBounds)
    query_self_attention: bool = True
    learnable_anchors: bool = True
    use_cross_depth: bool = True
    separate_query_pos: bool = False

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        for name in ("embed_dim", "decoder_layers", "heads", "num_queries", "num_classes",
                     "head_hidden", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.encoder_layers < 0:
            raise ConfigurationError(f"encoder_layers must be >= 0, got {self.encoder_layers}")
        stride = self.feature_stride
        if stride < 2 or (stride & (stride - 1)) != 0:
            raise ConfigurationError(f"feature_stride must be a power of two >= 2, got {stride}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_range"] = {
            "d_min": self.depth_range.d_min,
            "d_max": self.depth_range.d_max,
            "num_bins": self.depth_range.num_bins,
        }
        d["scene_bounds"] = {"min": list(self.scene_bounds.min), "max": list(self.scene_bounds.max)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "depth_range" in d:
            d["depth_range"] = DepthRange(**d["depth_range"])
        if "scene_bounds" in d:
            sb = d["scene_bounds"]
            d["scene_bounds"] = SceneBounds(min=tuple(sb["min"]), max=tuple(sb["max"]))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)
