"""Downstream clinical task harnesses.

Three tasks fed by frozen segmentations fused with greyscale video frames:
classifying the direction of S/F change between paired videos, regressing
the per-day S/F ratio with per-view aggregation, and predicting 30-day
readmission by a per-view majority vote over day-difference features.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from confseg import tensornet as tn
from confseg.dataio import CohortManifest, read_cmap, read_pgm
from confseg.labels import NUM_CHANNELS

SF_DECREASE, SF_SAME, SF_INCREASE = 0, 1, 2
CLASS_NAMES_3 = ("Decrease", "Same", "Increase")
NOT_INCREASE, INCREASE = 0, 1
SAME_TOLERANCE = 1e-9

FUSED_CHANNELS = 1 + NUM_CHANNELS  # greyscale + six segmentation planes
FEATURE_WIDTH = 32
VIEW_COUNT = 6


def label_pair(sf_a: float, sf_b: float) -> int:
    """Direction of change from the first to the second S/F value."""
    if abs(sf_a - sf_b) <= SAME_TOLERANCE:
        return SF_SAME
    return SF_DECREASE if sf_a > sf_b else SF_INCREASE


def collapse_2class(label3: int) -> int:
    """Fold Decrease and Same into a single Not-Increase class."""
    return INCREASE if label3 == SF_INCREASE else NOT_INCREASE


@dataclass
class PairExample:
    patient_a: str
    patient_b: str
    video_a: str
    video_b: str
    zone: int
    sf_a: float
    sf_b: float
    label: int


def _videos_of(manifest: CohortManifest, patients) -> list[dict]:
    wanted = set(patients)
    rows = []
    for p in manifest.patients:
        if p.patient_id not in wanted:
            continue
        for d in p.days:
            for v in d.videos:
                rows.append({
                    "patient": p.patient_id,
                    "day": d.day_index,
                    "sf": d.sf_ratio_normalized,
                    "video": v,
                })
    rows.sort(key=lambda r: (r["patient"], r["day"], r["video"].video_id))
    return rows


def build_pairs(manifest: CohortManifest, patients, role: str, seed: int,
                cap: int | None = None) -> list[PairExample]:
    """Enumerate S/F comparison pairs for one role's patient set.

    Training pairs may cross patients and days but never zones; validation
    and test pairs must additionally stay within one patient.  Pairs are
    enumerated in canonical manifest order and subsampled to ``cap`` with
    the given seed.
    """
    if role not in ("train", "val", "test"):
        raise ValueError(f"unknown pair role {role!r}")
    rows = _videos_of(manifest, patients)
    if not rows:
        raise ValueError(f"no videos for role {role!r}")

    groups: dict = {}
    for r in rows:
        key = r["video"].zone if role == "train" else (r["patient"], r["video"].zone)
        groups.setdefault(key, []).append(r)

    pairs: list[PairExample] = []
    for key in sorted(groups, key=str):
        for a, b in combinations(groups[key], 2):
            pairs.append(PairExample(
                patient_a=a["patient"],
                patient_b=b["patient"],
                video_a=a["video"].video_id,
                video_b=b["video"].video_id,
                zone=a["video"].zone,
                sf_a=a["sf"],
                sf_b=b["sf"],
                label=label_pair(a["sf"], b["sf"]),
            ))
    if not pairs:
        raise ValueError(f"no eligible pairs for role {role!r}")
    if cap is not None and len(pairs) > cap:
        rng = np.random.default_rng(seed)
        keep = rng.permutation(len(pairs))[:cap]
        pairs = [pairs[i] for i in keep]
    return pairs


# ---------------------------------------------------------------------------
# Fused video inputs

class FusedVideoSource:
    """Loads videos as (T, 7, H, W) float rasters with a pluggable
    segmentation-channel source: 'oracle' (label confidences / 100), 'zero',
    or 'model' (frozen per-frame segmenter probabilities)."""

    def __init__(self, manifest: CohortManifest, cohort_dir, seg_source: str = "oracle",
                 seg_model=None, max_frames: int | None = None):
        if seg_source not in ("oracle", "zero", "model"):
            raise ValueError(f"unknown seg_source {seg_source!r}")
        if seg_source == "model" and seg_model is None:
            raise ValueError("seg_source 'model' requires a segmentation model")
        self.manifest = manifest
        self.cohort_dir = Path(cohort_dir)
        self.seg_source = seg_source
        self.seg_model = seg_model
        self.max_frames = max_frames
        self._videos = {}
        for p in manifest.patients:
            for d in p.days:
                for v in d.videos:
                    self._videos[v.video_id] = v
        self._cache: dict[str, np.ndarray] = {}

    def video_ids(self):
        return sorted(self._videos)

    def load(self, video_id: str) -> np.ndarray:
        if video_id in self._cache:
            return self._cache[video_id]
        entry = self._videos[video_id]
        refs = entry.image_refs
        if self.max_frames is not None:
            refs = refs[: self.max_frames]
        frames = np.stack([read_pgm(self.cohort_dir / r) for r in refs])
        t, h, w = frames.shape
        fused = np.zeros((t, FUSED_CHANNELS, h, w), dtype=np.float32)
        fused[:, 0] = frames.astype(np.float32) / 255.0
        if self.seg_source == "oracle":
            cmap = read_cmap(self.cohort_dir / entry.label_ref)
            fused[:, 1:] = cmap.values.astype(np.float32) / 100.0
        elif self.seg_source == "model":
            from confseg.segmodel import infer_seg

            for i in range(t):
                prob, _ = infer_seg(self.seg_model, frames[i])
                fused[i, 1:] = prob.astype(np.float32)
        self._cache[video_id] = fused
        return fused


# ---------------------------------------------------------------------------
# Models

class VideoEncoder(tn.Module):
    """Two conv stages, each preceded by a residual temporal-shift block;
    global average pooling over space and time yields a 32-wide feature."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.stem = tn.Conv2d(FUSED_CHANNELS, 16, 3, stride=2, rng=rng)
        self.shift_conv1 = tn.Conv2d(16, 16, 3, stride=1, rng=rng)
        self.down = tn.Conv2d(16, 32, 3, stride=2, rng=rng)
        self.shift_conv2 = tn.Conv2d(32, 32, 3, stride=1, rng=rng)

    def __call__(self, video: tn.Tensor) -> tn.Tensor:
        h = tn.relu(self.stem(video))
        h = tn.relu(tn.add(h, self.shift_conv1(tn.temporal_shift(h))))
        h = tn.relu(self.down(h))
        h = tn.relu(tn.add(h, self.shift_conv2(tn.temporal_shift(h))))
        pooled = tn.global_avg_pool(h, axes=(0, 2, 3))  # over T, H, W
        return tn.reshape(pooled, (1, FEATURE_WIDTH))


class ChangeModel(tn.Module):
    """Late fusion: shared-weight encoding of both videos, feature
    subtraction, then a single MLP layer to 3-class logits."""

    def __init__(self, seed: int = 0):
        self.encoder = VideoEncoder(seed=seed)
        self.head = tn.Linear(FEATURE_WIDTH, 3, rng=np.random.default_rng(seed + 1))

    def forward_pair(self, video_a: np.ndarray, video_b: np.ndarray) -> tn.Tensor:
        fa = self.encoder(tn.Tensor(video_a))
        fb = self.encoder(tn.Tensor(video_b))
        return self.head(tn.sub(fb, fa))


class RegressionModel(tn.Module):
    """Per-view S/F regression: encoder + two hidden MLP layers (32, 16)."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed + 2)
        self.encoder = VideoEncoder(seed=seed)
        self.fc1 = tn.Linear(FEATURE_WIDTH, 32, rng=rng)
        self.fc2 = tn.Linear(32, 16, rng=rng)
        self.out = tn.Linear(16, 1, rng=rng)

    def __call__(self, video: np.ndarray) -> tn.Tensor:
        f = self.encoder(tn.Tensor(video))
        h = tn.relu(self.fc1(f))
        h = tn.relu(self.fc2(h))
        return self.out(h)

    def predict(self, video: np.ndarray) -> float:
        return float(self(video).data[0, 0])


class ReadmissionModel(tn.Module):
    """Shared encoder with six per-view classification heads."""

    def __init__(self, seed: int = 0):
        self.encoder = VideoEncoder(seed=seed)
        rng = np.random.default_rng(seed + 3)
        self.heads = [tn.Linear(FEATURE_WIDTH, 2, rng=rng) for _ in range(VIEW_COUNT)]

    def view_logits(self, view_idx: int, day1: np.ndarray, day2: np.ndarray) -> tn.Tensor:
        f1 = self.encoder(tn.Tensor(day1))
        f2 = self.encoder(tn.Tensor(day2))
        return self.heads[view_idx](tn.sub(f2, f1))


def majority_vote(view_logits: np.ndarray) -> int:
    """Majority vote over per-view argmax decisions, (6, 2) logits in.

    A 3-3 tie is broken by summing the raw logits over views and taking the
    class with the larger sum (an exact sum tie falls back to class 0).
    """
    logits = np.asarray(view_logits, dtype=np.float64)
    if logits.shape != (VIEW_COUNT, 2):
        raise ValueError(f"expected (6, 2) logits, got {logits.shape}")
    votes = np.argmax(logits, axis=1)
    ones = int(votes.sum())
    if ones > VIEW_COUNT // 2:
        return 1
    if ones < VIEW_COUNT // 2:
        return 0
    sums = logits.sum(axis=0)
    return int(sums[1] > sums[0])


def aggregate_views(preds, mode: str) -> float:
    """Combine per-view predictions into one patient-level value."""
    arr = np.asarray(list(preds), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("aggregate_views needs at least one prediction")
    if mode == "avg":
        return float(arr.mean())
    if mode == "median":
        return float(np.median(arr))
    if mode == "max":
        return float(arr.max())
    raise ValueError(f"unknown aggregation mode {mode!r}")


# ---------------------------------------------------------------------------
# Trainers

@dataclass
class TaskTrainConfig:
    epochs: int = 8
    lr: float = 1e-4        # or 1e-5, per experiment config
    lr_min: float = 0.0
    restart_period: int = 4
    restart_mult: int = 2
    seed: int = 0


def _task_schedule(cfg: TaskTrainConfig) -> tn.CosineWarmRestarts:
    return tn.CosineWarmRestarts(cfg.lr, cfg.lr_min, period=cfg.restart_period,
                                 mult=cfg.restart_mult)


def train_change(source: FusedVideoSource, pairs: list[PairExample],
                 cfg: TaskTrainConfig) -> ChangeModel:
    """Train the S/F change classifier on fused video pairs."""
    model = ChangeModel(seed=cfg.seed)
    opt = tn.Adam(model.parameters(), lr=cfg.lr)
    schedule = _task_schedule(cfg)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        opt.lr = schedule.lr_at(epoch)
        for i in rng.permutation(len(pairs)):
            pair = pairs[i]
            model.zero_grad()
            logits = model.forward_pair(source.load(pair.video_a), source.load(pair.video_b))
            loss = tn.softmax_ce_loss(logits, np.array([pair.label]))
            if not np.isfinite(loss.item()):
                raise RuntimeError(f"non-finite change loss at epoch {epoch}")
            loss.backward()
            opt.step()
    return model


def eval_change(model: ChangeModel, source: FusedVideoSource,
                pairs: list[PairExample]) -> dict:
    preds3, gold3 = [], []
    for pair in pairs:
        logits = model.forward_pair(source.load(pair.video_a), source.load(pair.video_b))
        preds3.append(int(np.argmax(logits.data[0])))
        gold3.append(pair.label)
    acc3 = float(np.mean([p == g for p, g in zip(preds3, gold3)]))
    acc2 = float(np.mean([
        collapse_2class(p) == collapse_2class(g) for p, g in zip(preds3, gold3)
    ]))
    return {"acc3": acc3, "acc2": acc2, "preds": preds3}


def _patient_day_views(manifest: CohortManifest, patients):
    """Yield (patient_id, day_index, sf, [videos in view order])."""
    wanted = set(patients)
    for p in manifest.patients:
        if p.patient_id not in wanted:
            continue
        for d in p.days:
            ordered = sorted(d.videos, key=lambda v: (v.zone, v.view))
            yield p.patient_id, d.day_index, d.sf_ratio_normalized, ordered


def train_regression(source: FusedVideoSource, manifest: CohortManifest,
                     patients, cfg: TaskTrainConfig) -> RegressionModel:
    """Train per-view S/F regression with an MSE objective."""
    examples = [
        (v.video_id, sf)
        for _, _, sf, videos in _patient_day_views(manifest, patients)
        for v in videos
    ]
    if not examples:
        raise ValueError("no training videos for regression")
    model = RegressionModel(seed=cfg.seed)
    # Start calibrated: output bias at the training-target mean.
    target_mean = float(np.mean([sf for _, sf in examples]))
    model.out.bias.data = np.array([target_mean], dtype=np.float32)
    opt = tn.Adam(model.parameters(), lr=cfg.lr)
    schedule = _task_schedule(cfg)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        opt.lr = schedule.lr_at(epoch)
        for i in rng.permutation(len(examples)):
            vid, sf = examples[i]
            model.zero_grad()
            pred = model(source.load(vid))
            loss = tn.mse_loss(pred, np.array([[sf]], dtype=np.float32))
            if not np.isfinite(loss.item()):
                raise RuntimeError(f"non-finite regression loss at epoch {epoch}")
            loss.backward()
            opt.step()
    return model


def eval_regression(model: RegressionModel, source: FusedVideoSource,
                    manifest: CohortManifest, patients) -> dict:
    """Patient-day RMSE for each aggregation mode."""
    from confseg.metrics import rmse

    agg_preds = {"avg": [], "median": [], "max": []}
    targets = []
    for _, _, sf, videos in _patient_day_views(manifest, patients):
        view_preds = [model.predict(source.load(v.video_id)) for v in videos]
        targets.append(sf)
        for mode in agg_preds:
            agg_preds[mode].append(aggregate_views(view_preds, mode))
    return {
        f"rmse_{mode}": rmse(preds, targets) for mode, preds in agg_preds.items()
    }


def _patient_view_pairs(manifest: CohortManifest, patients):
    """Yield (patient_id, readmitted, [(view, day1_video, day2_video)] x6)."""
    wanted = set(patients)
    for p in manifest.patients:
        if p.patient_id not in wanted:
            continue
        by_day = {d.day_index: {v.view: v for v in d.videos} for d in p.days}
        days = sorted(by_day)
        d1, d2 = by_day[days[0]], by_day[days[1]]
        views = sorted(d1)
        if sorted(d2) != views or len(views) != VIEW_COUNT:
            raise ValueError(f"patient {p.patient_id}: missing view/day videos")
        yield p.patient_id, p.readmission_flag, [
            (view, d1[view], d2[view]) for view in views
        ]


def train_readmission(source: FusedVideoSource, manifest: CohortManifest,
                      patients, cfg: TaskTrainConfig,
                      warm_start: dict | None = None) -> ReadmissionModel:
    """Train the readmission vote model, optionally warm-starting the
    encoder from an S/F-change checkpoint."""
    model = ReadmissionModel(seed=cfg.seed)
    if warm_start is not None:
        encoder_state = {
            name[len("encoder."):]: arr
            for name, arr in warm_start.items()
            if name.startswith("encoder.")
        }
        model.encoder.load_state_dict(encoder_state)
    rows = list(_patient_view_pairs(manifest, patients))
    if not rows:
        raise ValueError("no training patients for readmission")
    opt = tn.Adam(model.parameters(), lr=cfg.lr)
    schedule = _task_schedule(cfg)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        opt.lr = schedule.lr_at(epoch)
        for i in rng.permutation(len(rows)):
            _, readmitted, view_videos = rows[i]
            label = np.array([int(readmitted)])
            for view_idx, (_, v1, v2) in enumerate(view_videos):
                model.zero_grad()
                logits = model.view_logits(
                    view_idx, source.load(v1.video_id), source.load(v2.video_id)
                )
                loss = tn.softmax_ce_loss(logits, label)
                if not np.isfinite(loss.item()):
                    raise RuntimeError(f"non-finite readmission loss at epoch {epoch}")
                loss.backward()
                opt.step()
    return model


def readmission_predict(model: ReadmissionModel, view_videos) -> tuple[int, np.ndarray]:
    """Predict one patient's readmission from 6 views x 2 days.

    ``view_videos`` is a sequence of (day1_video, day2_video) fused rasters
    in view order.  Returns the voted flag and the (6, 2) per-view logits.
    """
    if len(view_videos) != VIEW_COUNT:
        raise ValueError(f"need all {VIEW_COUNT} views, got {len(view_videos)}")
    logits = np.zeros((VIEW_COUNT, 2), dtype=np.float64)
    for view_idx, (day1, day2) in enumerate(view_videos):
        out = model.view_logits(view_idx, day1, day2)
        logits[view_idx] = out.data[0]
    return majority_vote(logits), logits


def eval_readmission(model: ReadmissionModel, source: FusedVideoSource,
                     manifest: CohortManifest, patients) -> dict:
    from confseg.metrics import classification_scores

    preds, gold = [], []
    for _, readmitted, view_videos in _patient_view_pairs(manifest, patients):
        fused = [
            (source.load(v1.video_id), source.load(v2.video_id))
            for _, v1, v2 in view_videos
        ]
        flag, _ = readmission_predict(model, fused)
        preds.append(flag)
        gold.append(int(readmitted))
    return classification_scores(preds, gold, positive_class=1)
