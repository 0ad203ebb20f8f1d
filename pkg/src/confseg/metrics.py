"""Segmentation and downstream metrics.

All segmentation metrics take (6, H, W) stacks and return means, never sums,
so values are comparable across resolutions.  Predicted probabilities are
clamped to [EPS, 1-EPS] before any log.
"""

from __future__ import annotations

import numpy as np

from confseg.labels import (
    NUM_CHANNELS,
    ConfidenceMap,
    trimap_select,
)

EPS = 1e-7


class UndefinedMetricError(ValueError):
    """Raised when a metric has no value (e.g. trimap loss with no certain pixels)."""


def clamp_probs(pred: np.ndarray) -> np.ndarray:
    return np.clip(pred, EPS, 1.0 - EPS)


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def iou(pred: np.ndarray, gt: np.ndarray) -> dict:
    """Intersection over union, per channel and macro-averaged.

    Channels whose union is empty are excluded from the macro mean (their
    per-channel entry is NaN); if every union is empty the macro is 1.0.
    """
    _check_dims(pred, gt)
    p = pred.astype(bool)
    g = gt.astype(bool)
    inter = (p & g).reshape(NUM_CHANNELS, -1).sum(axis=1)
    union = (p | g).reshape(NUM_CHANNELS, -1).sum(axis=1)
    per_channel = np.full(NUM_CHANNELS, np.nan)
    nonempty = union > 0
    per_channel[nonempty] = inter[nonempty] / union[nonempty]
    macro = float(per_channel[nonempty].mean()) if nonempty.any() else 1.0
    return {"per_channel": per_channel, "macro": macro}


def weighted_ce(pred: np.ndarray, gt: np.ndarray, w: np.ndarray) -> float:
    """Mean of -w * [y log(p) + (1-y) log(1-p)] over all pixels and channels."""
    _check_dims(pred, gt)
    _check_dims(pred, w)
    p = clamp_probs(np.asarray(pred, dtype=np.float64))
    y = np.asarray(gt, dtype=np.float64)
    loss = -w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(loss.mean())


def soft_ce(pred: np.ndarray, cmap: ConfidenceMap) -> float:
    """Unweighted cross-entropy against the raw (unthresholded) confidences."""
    _check_dims(pred, cmap.values)
    p = clamp_probs(np.asarray(pred, dtype=np.float64))
    c = cmap.values.astype(np.float64) / 100.0
    loss = -(c * np.log(p) + (1.0 - c) * np.log(1.0 - p))
    return float(loss.mean())


def trimap_loss(pred: np.ndarray, cmap: ConfidenceMap) -> float:
    """Cross-entropy restricted to pixels with confidence exactly 0 or 100."""
    _check_dims(pred, cmap.values)
    tri = trimap_select(cmap)
    if tri.count == 0:
        raise UndefinedMetricError(
            "trimap loss undefined: map has no pixels with confidence 0 or 100"
        )
    p = clamp_probs(np.asarray(pred, dtype=np.float64))[tri.certain]
    y = tri.targets[tri.certain]
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(loss.mean())


def rmse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError("prediction/target length mismatch")
    if preds.size == 0:
        raise ValueError("rmse undefined on empty inputs")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def classification_scores(preds, targets, positive_class) -> dict:
    """Accuracy, recall and precision against one positive class.

    Precision is None when nothing was predicted positive (undefined, never
    silently zero).
    """
    preds = list(preds)
    targets = list(targets)
    if len(preds) != len(targets):
        raise ValueError("prediction/target length mismatch")
    if not preds:
        raise ValueError("scores undefined on empty inputs")
    tp = sum(1 for p, t in zip(preds, targets) if p == positive_class and t == positive_class)
    fp = sum(1 for p, t in zip(preds, targets) if p == positive_class and t != positive_class)
    fn = sum(1 for p, t in zip(preds, targets) if p != positive_class and t == positive_class)
    correct = sum(1 for p, t in zip(preds, targets) if p == t)
    accuracy = correct / len(preds)
    recall = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    return {"accuracy": accuracy, "recall": recall, "precision": precision}


def evaluate_seg(pred: np.ndarray, cmap: ConfidenceMap, threshold: int) -> dict:
    """All four segmentation metrics for one prediction at one threshold.

    ``trimap_loss`` is NaN when the map has no certain pixels.
    """
    from confseg.labels import compute_weights, threshold_map

    gt = threshold_map(cmap, threshold)
    w = compute_weights(cmap, threshold, gt)
    mask = (np.asarray(pred) >= 0.5).astype(np.uint8)
    scores = iou(mask, gt)
    try:
        tri = trimap_loss(pred, cmap)
    except UndefinedMetricError:
        tri = float("nan")
    return {
        "iou": scores["macro"],
        "iou_per_channel": scores["per_channel"],
        "weighted_ce": weighted_ce(pred, gt, w),
        "soft_ce": soft_ce(pred, cmap),
        "trimap_loss": tri,
    }
