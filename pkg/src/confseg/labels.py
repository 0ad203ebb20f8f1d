"""Confidence-label data model and the threshold / weight / trimap transforms.

A confidence map stores, for each of six anatomical feature channels, the
annotator's per-pixel certainty as an integer percent (0..100).  Everything
downstream (binary training targets, loss weights, trimap selection) is a
pure function of that raster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNEL_NAMES = (
    "sharp_pleura",
    "fuzzy_pleura",
    "fascia_band",
    "a_line",
    "sub_a_line",
    "vertical_line",
)
NUM_CHANNELS = len(CHANNEL_NAMES)

# The experiment grid of confidence cutoffs.  0 means "any positive
# confidence", 100 means "only fully certain pixels".
THRESHOLD_LEVELS = (0, 20, 40, 50, 60, 80, 100)

# Background pixels are weighted by threshold/100, except for the two edge
# models (0 and 100) where the background weight is fixed at 0.8.
BACKGROUND_WEIGHT_EDGE = 0.8


def as_threshold(level: int) -> int:
    """Validate a confidence threshold against the fixed grid."""
    if level not in THRESHOLD_LEVELS:
        raise ValueError(
            f"threshold {level!r} not in the fixed set {THRESHOLD_LEVELS}"
        )
    return int(level)


class ConfidenceMap:
    """Per-pixel, per-channel expert confidence raster.

    Values are integer percent in [0, 100], stored as a (6, height, width)
    uint8 array with the fixed channel order of ``CHANNEL_NAMES``.
    """

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        arr = np.asarray(values)
        if arr.ndim != 3 or arr.shape[0] != NUM_CHANNELS:
            raise ValueError(
                f"confidence map must have shape (6, H, W), got {arr.shape}"
            )
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError("confidence map must be at least 1x1")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 100):
                raise ValueError("confidence values must lie in [0, 100]")
            arr = arr.astype(np.uint8)
        elif np.any(arr > 100):
            raise ValueError("confidence values must lie in [0, 100]")
        self.values = arr

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfidenceMap):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.values.shape, self.values.tobytes()))

    def __repr__(self) -> str:
        return f"ConfidenceMap({self.width}x{self.height})"

    @classmethod
    def zeros(cls, width: int, height: int) -> "ConfidenceMap":
        return cls(np.zeros((NUM_CHANNELS, height, width), dtype=np.uint8))


@dataclass
class TrimapMask:
    """Pixels with confidence exactly 0 or 100, plus their binary targets.

    ``certain`` is a (6, H, W) bool array; ``targets`` holds 0.0 or 1.0 on
    certain pixels (value/100) and 0.0 elsewhere.
    """

    certain: np.ndarray
    targets: np.ndarray

    @property
    def count(self) -> int:
        return int(self.certain.sum())


def threshold_map(cmap: ConfidenceMap, t: int) -> np.ndarray:
    """Binarize a confidence map at threshold ``t``.

    For t > 0 a pixel is foreground iff its confidence is >= t; the t = 0
    model instead keeps every strictly positive pixel (the unthresholded
    baseline).  Returns a (6, H, W) uint8 mask of {0, 1}.
    """
    t = as_threshold(t)
    if t == 0:
        return (cmap.values > 0).astype(np.uint8)
    return (cmap.values >= t).astype(np.uint8)


def compute_weights(cmap: ConfidenceMap, t: int, mask: np.ndarray) -> np.ndarray:
    """Per-pixel loss weights for training at threshold ``t``.

    Foreground pixels are weighted by their own confidence (value/100).
    Background pixels are weighted by t/100, except at the edge thresholds
    0 and 100 where the background weight is 0.8.
    """
    t = as_threshold(t)
    if mask.shape != cmap.values.shape:
        raise ValueError("mask shape does not match confidence map")
    background = t / 100.0 if t in (20, 40, 50, 60, 80) else BACKGROUND_WEIGHT_EDGE
    fg = cmap.values.astype(np.float64) / 100.0
    return np.where(mask.astype(bool), fg, background)


def trimap_select(cmap: ConfidenceMap) -> TrimapMask:
    """Select pixels that are certainly background or foreground.

    A pixel is certain iff its raw confidence is exactly 0 or 100; the
    selection never depends on any threshold.
    """
    v = cmap.values
    certain = (v == 0) | (v == 100)
    targets = np.where(v == 100, 1.0, 0.0)
    return TrimapMask(certain=certain, targets=targets)


def foreground_fraction(mask: np.ndarray, channel: int) -> float:
    """Fraction of foreground pixels in one channel of a binary mask stack."""
    if not 0 <= channel < NUM_CHANNELS:
        raise IndexError(f"channel index {channel} out of range 0..5")
    plane = mask[channel]
    return float(plane.sum()) / plane.size
