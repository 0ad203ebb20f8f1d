"""Tiny pyramid segmenter and its training pipeline.

The model is a from-scratch, desk-scale analogue of a feature-pyramid
segmentation network: three stride-2 encoder stages (widths 8/16/32),
1x1 lateral projections to width 16, a top-down nearest-upsample-and-add
pathway, and a 3x3 head producing six per-channel logits at the input
resolution.  Each output channel is an independent sigmoid (structures may
overlap), trained with the confidence-weighted binary cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from confseg import tensornet as tn
from confseg.labels import (
    NUM_CHANNELS,
    ConfidenceMap,
    as_threshold,
    compute_weights,
    threshold_map,
)
from confseg.metrics import iou


@dataclass
class SegTrainConfig:
    threshold: int = 60
    epochs: int = 100
    lr: float = 1e-4
    lr_min: float = 0.0
    batch_size: int = 16
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        as_threshold(self.threshold)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class SegTrainResult:
    model: "TinyFPN"
    checkpoint: dict
    train_loss: list[float]
    val_iou: list[float]
    best_epoch: int


class TinyFPN(tn.Module):
    """1-channel greyscale in, 6-channel logits out, same spatial size."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.enc1 = tn.Conv2d(1, 8, 3, stride=2, rng=rng)
        self.enc2 = tn.Conv2d(8, 16, 3, stride=2, rng=rng)
        self.enc3 = tn.Conv2d(16, 32, 3, stride=2, rng=rng)
        self.lat1 = tn.Conv2d(8, 16, 1, rng=rng)
        self.lat2 = tn.Conv2d(16, 16, 1, rng=rng)
        self.lat3 = tn.Conv2d(32, 16, 1, rng=rng)
        # Zero-init head: an untrained model outputs probability 0.5 everywhere.
        self.head = tn.Conv2d(16, NUM_CHANNELS, 3, zero_init=True)

    def __call__(self, x: tn.Tensor) -> tn.Tensor:
        e1 = tn.relu(self.enc1(x))
        e2 = tn.relu(self.enc2(e1))
        e3 = tn.relu(self.enc3(e2))
        p3 = self.lat3(e3)
        p2 = tn.add(self.lat2(e2), tn.nearest_upsample2(p3))
        p1 = tn.add(self.lat1(e1), tn.nearest_upsample2(p2))
        return self.head(tn.nearest_upsample2(p1))


# ---------------------------------------------------------------------------
# Augmentation

def augment(image: np.ndarray, cmap: ConfidenceMap, rng: np.random.Generator):
    """Jointly augment an image and its confidence labels.

    With independent probability 1/2 each: horizontal flip, rotation by a
    uniform angle within +-15 degrees (bilinear for the image, nearest for
    labels, zeros outside), and an image-only intensity transform (gain in
    U(0.8, 1.2) followed by gamma in U(0.8, 1.25), clamped to [0, 255]).
    """
    img = np.asarray(image, dtype=np.float32)
    labels = cmap.values

    if rng.random() < 0.5:
        img = img[:, ::-1].copy()
        labels = labels[:, :, ::-1].copy()

    if rng.random() < 0.5:
        angle = rng.uniform(-15.0, 15.0)
        img = ndimage.rotate(img, angle, reshape=False, order=1,
                             mode="constant", cval=0.0)
        labels = ndimage.rotate(labels, angle, axes=(1, 2), reshape=False,
                                order=0, mode="constant", cval=0)

    if rng.random() < 0.5:
        gain = rng.uniform(0.8, 1.2)
        gamma = rng.uniform(0.8, 1.25)
        scaled = np.clip(img * gain / 255.0, 0.0, 1.0) ** gamma
        img = np.clip(scaled * 255.0, 0.0, 255.0)

    return img, ConfidenceMap(np.clip(labels, 0, 100).astype(np.uint8))


# ---------------------------------------------------------------------------
# Training / inference

def _to_input(images: np.ndarray) -> tn.Tensor:
    # (N, H, W) uint8/float -> (N, 1, H, W) float32 in [0, 1]
    arr = np.asarray(images, dtype=np.float32) / 255.0
    return tn.Tensor(arr[:, None, :, :])


def _epoch_iou(model: TinyFPN, val_set, threshold: int) -> float:
    scores = []
    for img, cmap in val_set:
        prob, _ = infer_seg(model, img)
        gt = threshold_map(cmap, threshold)
        scores.append(iou((prob >= 0.5).astype(np.uint8), gt)["macro"])
    return float(np.mean(scores))


def train_seg(config: SegTrainConfig, train_set, val_set) -> SegTrainResult:
    """Train the segmenter at one confidence threshold.

    ``train_set`` and ``val_set`` are sequences of (image, ConfidenceMap).
    Targets and weights are recomputed per step from the (augmented) labels
    at ``config.threshold``.  The returned checkpoint is from the epoch with
    the highest validation macro IoU (earliest epoch wins ties).
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    t = as_threshold(config.threshold)
    model = TinyFPN(seed=config.seed)
    opt = tn.Adam(model.parameters(), lr=config.lr)
    schedule = tn.CosineSchedule(config.lr, config.lr_min, period=max(1, config.epochs - 1))
    rng = np.random.default_rng(config.seed)

    train_loss: list[float] = []
    val_iou: list[float] = []
    best_iou = -1.0
    best_epoch = -1
    best_state: dict = {}

    n = len(train_set)
    for epoch in range(config.epochs):
        opt.lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            imgs, targets, weights = [], [], []
            for i in batch_idx:
                img, cmap = train_set[i]
                if config.augment:
                    img, cmap = augment(img, cmap, rng)
                imgs.append(np.asarray(img, dtype=np.float32))
                mask = threshold_map(cmap, t)
                targets.append(mask)
                weights.append(compute_weights(cmap, t, mask))
            x = _to_input(np.stack(imgs))
            y = np.stack(targets).astype(np.float32)
            w = np.stack(weights).astype(np.float32)
            model.zero_grad()
            loss = tn.weighted_bce_loss(model(x), y, w)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite training loss {value!r} at epoch {epoch}, "
                    f"step {start // config.batch_size} (threshold {t})"
                )
            loss.backward()
            opt.step()
            losses.append(value)
        train_loss.append(float(np.mean(losses)))
        score = _epoch_iou(model, val_set, t)
        val_iou.append(score)
        if score > best_iou:
            best_iou = score
            best_epoch = epoch
            best_state = model.state_dict()

    model.load_state_dict(best_state)
    return SegTrainResult(
        model=model,
        checkpoint=best_state,
        train_loss=train_loss,
        val_iou=val_iou,
        best_epoch=best_epoch,
    )


def infer_seg(model: TinyFPN, image: np.ndarray):
    """Forward one image; returns (probability stack, binary mask at 0.5)."""
    x = _to_input(np.asarray(image)[None, :, :])
    logits = model(x)
    prob = 1.0 / (1.0 + np.exp(-logits.data[0].astype(np.float64)))
    return prob, (prob >= 0.5).astype(np.uint8)
