"""Bit-exact persistence: .cmap rasters, PGM images, cohort manifests, folds.

The .cmap container is a fixed little-endian layout so that every tool in
this repo (and the browser annotator) produces byte-identical files for the
same logical map:

    magic "CMAP" | version u8 = 1 | width u32 | height u32 | channels u32 = 6
    | payload channels*height*width bytes (0..100), channel-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from confseg.labels import NUM_CHANNELS, ConfidenceMap

CMAP_MAGIC = b"CMAP"
CMAP_VERSION = 1
CMAP_HEADER = struct.Struct("<4sBIII")  # 17 bytes

VIEW_NAMES = ("R1", "L1", "R2", "L2", "R3", "L3")
VIEW_ZONE = {"R1": 1, "L1": 1, "R2": 2, "L2": 2, "R3": 3, "L3": 3}

# The normalization constant applied to raw S/F ratios upstream of this
# artifact; recorded in manifests for provenance only.
SF_NORMALIZATION = 477.0


class FormatError(ValueError):
    """Base class for malformed on-disk data."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ValueRangeError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class UnsupportedDepthError(FormatError):
    pass


PathOrIO = Union[str, Path, BinaryIO]


def _open_for(src: PathOrIO, mode: str):
    if isinstance(src, (str, Path)):
        return open(src, mode), True
    return src, False


# ---------------------------------------------------------------------------
# .cmap

def cmap_to_bytes(cmap: ConfidenceMap) -> bytes:
    header = CMAP_HEADER.pack(
        CMAP_MAGIC, CMAP_VERSION, cmap.width, cmap.height, NUM_CHANNELS
    )
    return header + cmap.values.tobytes()


def cmap_from_bytes(blob: bytes) -> ConfidenceMap:
    if len(blob) < CMAP_HEADER.size:
        raise TruncatedError(
            f"cmap stream ends inside header ({len(blob)} bytes)"
        )
    magic, version, width, height, channels = CMAP_HEADER.unpack_from(blob)
    if magic != CMAP_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CMAP_MAGIC!r}")
    if version != CMAP_VERSION:
        raise VersionError(f"unsupported cmap version {version}")
    if channels != NUM_CHANNELS:
        raise ValueRangeError(f"cmap declares {channels} channels, expected 6")
    if width < 1 or height < 1:
        raise ValueRangeError(f"cmap declares empty raster {width}x{height}")
    expected = channels * height * width
    payload = blob[CMAP_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedError(
            f"cmap payload has {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(
        channels, height, width
    )
    if values.max(initial=0) > 100:
        raise ValueRangeError("cmap value out of range: payload byte > 100")
    return ConfidenceMap(values.copy())


def write_cmap(cmap: ConfidenceMap, sink: PathOrIO) -> None:
    fh, close = _open_for(sink, "wb")
    try:
        fh.write(cmap_to_bytes(cmap))
    finally:
        if close:
            fh.close()


def read_cmap(source: PathOrIO) -> ConfidenceMap:
    fh, close = _open_for(source, "rb")
    try:
        return cmap_from_bytes(fh.read())
    finally:
        if close:
            fh.close()


# ---------------------------------------------------------------------------
# PGM (P5, 8-bit, raw binary)

def write_pgm(img: np.ndarray, sink: PathOrIO) -> None:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"pgm image must be 2-D, got shape {arr.shape}")
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    fh, close = _open_for(sink, "wb")
    try:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
    finally:
        if close:
            fh.close()


def _read_pgm_tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integer tokens, skipping comments."""
    tokens: list[int] = []
    i = 0
    n = len(blob)
    while len(tokens) < count:
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i:i + 1] == b"#":
            while i < n and blob[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < n and not blob[i:i + 1].isspace():
            i += 1
        if start == i:
            raise TruncatedError("pgm header ends before all fields")
        try:
            tokens.append(int(blob[start:i]))
        except ValueError as exc:
            raise FormatError(f"bad pgm header token {blob[start:i]!r}") from exc
    return tokens, i + 1  # skip the single whitespace after maxval


def read_pgm(source: PathOrIO) -> np.ndarray:
    fh, close = _open_for(source, "rb")
    try:
        blob = fh.read()
    finally:
        if close:
            fh.close()
    if blob[:2] != b"P5":
        raise BadMagicError(f"not a raw greyscale pgm (magic {blob[:2]!r})")
    (w, h, maxval), offset = _read_pgm_tokens(blob[2:], 3)
    offset += 2
    if maxval != 255:
        raise UnsupportedDepthError(f"pgm maxval {maxval} unsupported (need 255)")
    if w < 1 or h < 1:
        raise FormatError(f"pgm declares empty image {w}x{h}")
    payload = blob[offset:]
    if len(payload) < w * h:
        raise TruncatedError(
            f"pgm payload has {len(payload)} bytes, expected {w * h}"
        )
    return np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# Cohort manifest

@dataclass
class VideoEntry:
    video_id: str
    view: str
    zone: int
    frame_count: int
    image_refs: list[str]
    label_ref: str

    def validate(self):
        if self.view not in VIEW_ZONE:
            raise ValueError(f"unknown view {self.view!r}")
        if VIEW_ZONE[self.view] != self.zone:
            raise ValueError(
                f"video {self.video_id}: zone {self.zone} inconsistent with view {self.view}"
            )
        if self.frame_count != len(self.image_refs):
            raise ValueError(f"video {self.video_id}: frame_count mismatch")


@dataclass
class DayRecord:
    day_index: int
    sf_ratio_normalized: float
    videos: list[VideoEntry]

    def validate(self):
        if not 0.0 <= self.sf_ratio_normalized <= 1.0:
            raise ValueError(
                f"day {self.day_index}: sf_ratio_normalized out of [0,1]"
            )
        for v in self.videos:
            v.validate()


@dataclass
class PatientRecord:
    patient_id: str
    readmission_flag: bool
    days: list[DayRecord]

    def validate(self):
        if len(self.days) < 2:
            raise ValueError(f"patient {self.patient_id}: fewer than 2 recorded days")
        for d in self.days:
            d.validate()


@dataclass
class CohortManifest:
    patients: list[PatientRecord]
    # Generator provenance: planted-link parameters, per-day burdens, etc.
    meta: dict = field(default_factory=dict)

    def validate(self):
        seen = set()
        for p in self.patients:
            if p.patient_id in seen:
                raise ValueError(f"duplicate patient id {p.patient_id}")
            seen.add(p.patient_id)
            p.validate()

    def patient_ids(self) -> list[str]:
        return [p.patient_id for p in self.patients]

    def to_json(self) -> str:
        doc = {
            "patients": [
                {
                    "patient_id": p.patient_id,
                    "readmission_flag": p.readmission_flag,
                    "days": [
                        {
                            "day_index": d.day_index,
                            "sf_ratio_normalized": d.sf_ratio_normalized,
                            "videos": [
                                {
                                    "video_id": v.video_id,
                                    "view": v.view,
                                    "zone": v.zone,
                                    "frame_count": v.frame_count,
                                    "image_refs": v.image_refs,
                                    "label_ref": v.label_ref,
                                }
                                for v in d.videos
                            ],
                        }
                        for d in p.days
                    ],
                }
                for p in self.patients
            ],
            "meta": self.meta,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CohortManifest":
        doc = json.loads(text)
        patients = [
            PatientRecord(
                patient_id=p["patient_id"],
                readmission_flag=bool(p["readmission_flag"]),
                days=[
                    DayRecord(
                        day_index=int(d["day_index"]),
                        sf_ratio_normalized=float(d["sf_ratio_normalized"]),
                        videos=[
                            VideoEntry(
                                video_id=v["video_id"],
                                view=v["view"],
                                zone=int(v["zone"]),
                                frame_count=int(v["frame_count"]),
                                image_refs=list(v["image_refs"]),
                                label_ref=v["label_ref"],
                            )
                            for v in d["videos"]
                        ],
                    )
                    for d in p["days"]
                ],
            )
            for p in doc["patients"]
        ]
        manifest = cls(patients=patients, meta=doc.get("meta", {}))
        manifest.validate()
        return manifest


def write_manifest(manifest: CohortManifest, path: Union[str, Path]) -> None:
    Path(path).write_text(manifest.to_json(), encoding="utf-8")


def read_manifest(path: Union[str, Path]) -> CohortManifest:
    return CohortManifest.from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Patient-wise fold splitting

@dataclass
class FoldSplit:
    fold_count: int
    held_out_test: list[str]
    folds: list[list[str]]

    def validate(self):
        groups = [self.held_out_test] + self.folds
        flat = [pid for g in groups for pid in g]
        if len(flat) != len(set(flat)):
            raise ValueError("fold split has a patient in two groups")

    def training_ids(self, val_fold: int) -> list[str]:
        return [
            pid
            for i, fold in enumerate(self.folds)
            if i != val_fold
            for pid in fold
        ]

    def to_json(self) -> str:
        return json.dumps(
            {
                "fold_count": self.fold_count,
                "held_out_test": self.held_out_test,
                "folds": self.folds,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldSplit":
        doc = json.loads(text)
        split = cls(
            fold_count=int(doc["fold_count"]),
            held_out_test=list(doc["held_out_test"]),
            folds=[list(f) for f in doc["folds"]],
        )
        split.validate()
        return split


def split_folds(
    manifest: CohortManifest,
    fold_count: int,
    test_patient_count: int,
    seed: int,
) -> FoldSplit:
    """Patient-wise split into a held-out test set plus fold_count-1 CV folds.

    The held-out set is fixed first (first ids after a seeded shuffle) so
    every experiment on a cohort shares one test set; remaining patients go
    round-robin into the CV folds, keeping sizes within 1 of each other.
    """
    ids = sorted(manifest.patient_ids())
    if len(ids) < fold_count + test_patient_count:
        raise ValueError(
            f"need at least {fold_count + test_patient_count} patients, have {len(ids)}"
        )
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    test = sorted(order[:test_patient_count])
    rest = order[test_patient_count:]
    cv_folds = fold_count - 1
    folds: list[list[str]] = [[] for _ in range(cv_folds)]
    for i, pid in enumerate(rest):
        folds[i % cv_folds].append(pid)
    split = FoldSplit(
        fold_count=fold_count,
        held_out_test=test,
        folds=[sorted(f) for f in folds],
    )
    split.validate()
    return split


def write_split(split: FoldSplit, path: Union[str, Path]) -> None:
    Path(path).write_text(split.to_json(), encoding="utf-8")


def read_split(path: Union[str, Path]) -> FoldSplit:
    return FoldSplit.from_json(Path(path).read_text(encoding="utf-8"))
