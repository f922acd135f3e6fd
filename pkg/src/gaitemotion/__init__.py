"""Perceived-emotion classification from 3D gait pose sequences."""

__version__ = "0.1.0"

from .estimator import (  # noqa: E402
    AffectiveTransformer,
    GaitEmotionClassifier,
    RotationTransformer,
    TemporalPreprocessor,
)

__all__ = [
    "AffectiveTransformer",
    "GaitEmotionClassifier",
    "RotationTransformer",
    "TemporalPreprocessor",
    "__version__",
]
