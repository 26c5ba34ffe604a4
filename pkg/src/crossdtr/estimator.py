"""Scikit-learn style front door: fit on scenes, predict detection sets.

The estimator wraps model construction, the training loop, and evaluation so
the detector composes with the usual ``get_params`` / ``set_params`` /
``clone`` machinery. X is a list of :class:`~crossdtr.bench.scenes.Scene`
objects; there is no separate y (scenes carry their own boxes).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .bench.metrics import mean_ap
from .bench.scenes import Scene
from .depthmap import DepthRange
from .errors import DataError
from .network.config import ModelConfig, SceneBounds
from .network.model import CrossDTRModel, DetectionSet
from .objective import LossWeights
from .training import TrainSettings, predict_scenes, train_model

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


def check_scenes(scenes, name: str = "X") -> list[Scene]:
    """Validate a scene collection: non-empty, Scene-typed, consistent rig."""
    scenes = list(scenes)
    if not scenes:
        raise DataError(f"{name} must contain at least one scene")
    for s in scenes:
        if not isinstance(s, Scene):
            raise DataError(f"{name} must hold Scene objects, got {type(s).__name__}")
    sizes = {(s.image_w, s.image_h, len(s.cameras)) for s in scenes}
    if len(sizes) != 1:
        raise DataError(f"{name} mixes image sizes / camera counts: {sorted(sizes)}")
    return scenes


class CrossViewDetector(BaseEstimator):
    """Depth-guided multi-camera 3D detector with a fit/predict interface.

    Parameters mirror the model/loss/optimizer configuration; everything is a
    plain constructor argument so hyperparameter search tooling can clone and
    reconfigure the estimator.
    """

    def __init__(
        self,
        embed_dim: int = 32,
        encoder_layers: int = 1,
        decoder_layers: int = 3,
        heads: int = 4,
        num_queries: int = 64,
        num_classes: int = 2,
        depth_bins: int = 16,
        depth_min: float = 1.0,
        depth_max: float = 61.2,
        feature_stride: int = 16,
        scene_bounds_min: tuple = (-40.0, -40.0, -3.0),
        scene_bounds_max: tuple = (40.0, 40.0, 3.0),
        use_cross_depth: bool = True,
        query_self_attention: bool = True,
        learnable_anchors: bool = True,
        alpha_class: float = 2.0,
        alpha_reg: float = 0.25,
        alpha_ddn: float = 1.0,
        lr: float = 2e-4,
        weight_decay: float = 0.01,
        lr_schedule: str = "cosine",
        epochs: int = 50,
        batch_size: int = 1,
        seed: int = 0,
    ):
        self.embed_dim = embed_dim
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.heads = heads
        self.num_queries = num_queries
        self.num_classes = num_classes
        self.depth_bins = depth_bins
        self.depth_min = depth_min
        self.depth_max = depth_max
        self.feature_stride = feature_stride
        self.scene_bounds_min = scene_bounds_min
        self.scene_bounds_max = scene_bounds_max
        self.use_cross_depth = use_cross_depth
        self.query_self_attention = query_self_attention
        self.learnable_anchors = learnable_anchors
        self.alpha_class = alpha_class
        self.alpha_reg = alpha_reg
        self.alpha_ddn = alpha_ddn
        self.lr = lr
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def build_model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            heads=self.heads,
            num_queries=self.num_queries,
            num_classes=self.num_classes,
            depth_range=DepthRange(self.depth_min, self.depth_max, self.depth_bins),
            feature_stride=self.feature_stride,
            scene_bounds=SceneBounds(tuple(self.scene_bounds_min), tuple(self.scene_bounds_max)),
            use_cross_depth=self.use_cross_depth,
            query_self_attention=self.query_self_attention,
            learnable_anchors=self.learnable_anchors,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha_class, self.alpha_reg, self.alpha_ddn)

    def fit(self, X, y=None, max_iterations=None):
        """Train on a list of scenes. y is ignored; scenes carry their boxes."""
        scenes = check_scenes(X)
        config = self.build_model_config()
        model = CrossDTRModel(config, np.random.default_rng(self.seed))
        settings = TrainSettings(
            lr=self.lr,
            weight_decay=self.weight_decay,
            lr_schedule=self.lr_schedule,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        result = train_model(model, scenes, self.loss_weights(), settings,
                             max_iterations=max_iterations)
        self.model_ = model
        self.config_ = config
        self.history_ = result.log
        return self

    def _require_fitted(self) -> CrossDTRModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError("call fit() before predict()/score()")
        return model

    def predict(self, X) -> list[DetectionSet]:
        """Last-decoder-layer detections for each scene."""
        model = self._require_fitted()
        return predict_scenes(model, check_scenes(X))

    def score(self, X, y=None) -> float:
        """Mean AP over classes and the standard distance thresholds."""
        scenes = check_scenes(X)
        preds = self.predict(scenes)
        return mean_ap(
            preds,
            [s.boxes for s in scenes],
            class_ids=range(self.num_classes),
            thresholds=DEFAULT_THRESHOLDS,
        )
