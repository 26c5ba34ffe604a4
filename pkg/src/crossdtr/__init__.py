"""Depth-guided multi-camera 3D object detection at desk scale."""

__version__ = "0.1.0"

from .estimator import CrossViewDetector

__all__ = ["CrossViewDetector", "__version__"]
