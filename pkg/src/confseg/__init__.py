"""Confidence-aware lung ultrasound segmentation laboratory."""

from confseg.labels import (
    BACKGROUND_WEIGHT_EDGE,
    CHANNEL_NAMES,
    NUM_CHANNELS,
    THRESHOLD_LEVELS,
    ConfidenceMap,
)

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND_WEIGHT_EDGE",
    "CHANNEL_NAMES",
    "NUM_CHANNELS",
    "THRESHOLD_LEVELS",
    "ConfidenceMap",
    "__version__",
]
