"""Deterministic synthetic lung-ultrasound cohort with a planted signal.

Each scene renders the six labeled structures at desk scale: a bright
pleural curve (split into a sharp and a fuzzy segment), a fascia band above
it, equally-spaced dimmer A-lines below, faint sub-A lines between them,
and k vertical streaks descending from the pleura.  Confidence labels put
100 on structure cores and decay outward through {80, 60, 40, 20} over the
falloff width, so threshold sweeps produce visibly distinct masks.

The clinical metadata carries a recoverable link: per patient-day burden k
drives both the normalized S/F ratio and the readmission probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from confseg.dataio import (
    CohortManifest,
    DayRecord,
    PatientRecord,
    VideoEntry,
    VIEW_NAMES,
    VIEW_ZONE,
    write_cmap,
    write_manifest,
    write_pgm,
)
from confseg.labels import CHANNEL_NAMES, NUM_CHANNELS, ConfidenceMap

# Planted-link coefficients (also recorded in every manifest).
SF_INTERCEPT = 0.95
SF_SLOPE = -0.10
SF_NOISE_STD = 0.03
SF_CLIP = (0.05, 1.0)
READMIT_BASE = 0.15
READMIT_SLOPE = 0.10

# Rendered intensities (8-bit).  Background is dim; every structure core
# sits well above it even under speckle.
BG_LEVEL = 30.0
INTENSITY = {
    "sharp_pleura": 235.0,
    "fuzzy_pleura": 150.0,
    "fascia_band": 120.0,
    "a_line": 115.0,
    "sub_a_line": 90.0,
    "vertical_line": 150.0,
}

CONF_RINGS = (80, 60, 40, 20)


@dataclass
class PhantomSpec:
    width: int = 64
    height: int = 64
    frames: int = 8
    pleural_depth: tuple = (18, 28)
    a_line_count: tuple = (1, 3)
    b_line_count: tuple = (0, 6)
    speckle: float = 0.25
    falloff: int = 4

    def validate(self):
        if self.width < 32 or self.height < 32:
            raise ValueError("phantom images must be at least 32x32")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        lo, hi = self.pleural_depth
        if not (8 <= lo <= hi <= self.height - 12):
            raise ValueError("pleural depth range does not fit the image")
        if self.a_line_count[0] > self.a_line_count[1] or self.a_line_count[0] < 0:
            raise ValueError("empty a_line count range")
        if not (0 <= self.b_line_count[0] <= self.b_line_count[1] <= 6):
            raise ValueError("b_line count range must lie within [0, 6]")
        if self.falloff < 1:
            raise ValueError("confidence falloff width must be >= 1")


@dataclass
class Scene:
    """One rendered patient-day-view scene: structure image plus label cores."""

    structure: np.ndarray       # float image without speckle
    cores: np.ndarray           # (6, H, W) bool
    k: int


def _ring_levels(falloff: int) -> dict[int, int]:
    # Map ring distance 1..falloff onto the fixed confidence grid.
    levels = {}
    for d in range(1, falloff + 1):
        idx = int(np.ceil(4 * d / falloff)) - 1
        levels[d] = CONF_RINGS[idx]
    return levels


def _labels_from_cores(cores: np.ndarray, falloff: int) -> ConfidenceMap:
    values = np.zeros(cores.shape, dtype=np.uint8)
    rings = _ring_levels(falloff)
    for ch in range(NUM_CHANNELS):
        core = cores[ch]
        if not core.any():
            continue
        dist = ndimage.distance_transform_cdt(~core, metric="chessboard")
        plane = values[ch]
        plane[core] = 100
        for d, level in rings.items():
            plane[dist == d] = level
    return ConfidenceMap(values)


# Soft cross-section of every rendered line: the structure is a smooth ridge,
# not a crisp 1-px row, so the annotator's exactly-certain core has genuine
# positional ambiguity.
PROFILE = ((-1, 0.65), (0, 1.0), (1, 0.65))


def render_scene(rng: np.random.Generator, spec: PhantomSpec, k: int) -> Scene:
    """Render the structure image and per-channel label cores for burden k.

    Label cores are jittered by one pixel relative to the rendered ridge
    (per structure, seeded), standing in for annotator imprecision: the
    certainly-foreground core is not pixel-exactly recoverable from the
    image, while wider low-threshold bands remain easy.
    """
    spec.validate()
    h, w = spec.height, spec.width
    img = np.full((h, w), BG_LEVEL, dtype=np.float64)
    cores = np.zeros((NUM_CHANNELS, h, w), dtype=bool)
    ch = {name: i for i, name in enumerate(CHANNEL_NAMES)}

    xs = np.arange(w)
    depth = rng.integers(spec.pleural_depth[0], spec.pleural_depth[1] + 1)
    amp = rng.uniform(0.0, 2.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    y_p = np.clip(
        np.round(depth + amp * np.sin(2 * np.pi * xs / w + phase)).astype(int),
        2, h - 3,
    )

    def jitter() -> int:
        return int(rng.integers(-1, 2))

    def draw_ridge(y_offsets, x_sel, level):
        for base in y_offsets:
            for dy, wgt in PROFILE:
                yy = y_p[x_sel] + base + dy
                ok = (yy >= 0) & (yy < h)
                img[yy[ok], x_sel[ok]] = np.maximum(
                    img[yy[ok], x_sel[ok]], level * wgt
                )

    def place_core(y_offsets, x_sel, channel, jit):
        for base in y_offsets:
            yy = np.clip(y_p[x_sel] + base + jit, 0, h - 1)
            cores[channel, yy, x_sel] = True

    # Pleura: one contiguous segment sharp (thin, bright), the rest fuzzy
    # (wider, dimmer band).
    split = int(rng.uniform(0.3, 0.7) * w)
    sharp_first = bool(rng.random() < 0.5)
    sharp_x = xs[:split] if sharp_first else xs[split:]
    fuzzy_x = xs[split:] if sharp_first else xs[:split]
    draw_ridge((0,), sharp_x, INTENSITY["sharp_pleura"])
    place_core((0,), sharp_x, ch["sharp_pleura"], jitter())
    draw_ridge((-1, 0, 1), fuzzy_x, INTENSITY["fuzzy_pleura"])
    place_core((-1, 0, 1), fuzzy_x, ch["fuzzy_pleura"], jitter())

    # Fascia band in the chest wall above the pleura.
    fascia_off = -int(rng.integers(6, 9))
    draw_ridge((fascia_off, fascia_off - 1), xs, INTENSITY["fascia_band"])
    place_core((fascia_off, fascia_off - 1), xs, ch["fascia_band"], jitter())

    # A-lines at equal spacing below the pleura, sub-A lines between them.
    n_a = int(rng.integers(spec.a_line_count[0], spec.a_line_count[1] + 1))
    gap = int(rng.integers(10, 15))
    a_offsets = []
    for m in range(1, n_a + 1):
        off = m * gap
        if depth + off >= h - 2:
            break
        a_offsets.append(off)
        draw_ridge((off,), xs, INTENSITY["a_line"])
        place_core((off,), xs, ch["a_line"], jitter())
    for off in a_offsets:
        sub = off - gap // 2
        if depth + sub < h - 2:
            draw_ridge((sub,), xs, INTENSITY["sub_a_line"])
            place_core((sub,), xs, ch["sub_a_line"], jitter())

    # k vertical streaks from the pleura downward, with per-line intensity
    # and length variation so streak area is not a clean global-statistic
    # proxy of k.
    if k > 0:
        margin = max(2, w // 16)
        cols = rng.choice(np.arange(margin, w - margin), size=k, replace=False)
        for x in np.sort(cols):
            top = int(y_p[x])
            bottom = top + max(6, int(rng.uniform(0.5, 1.0) * (h - top)))
            level = INTENSITY["vertical_line"] * rng.uniform(0.8, 1.2)
            for dx, wgt in PROFILE:
                xc = x + dx
                if 0 <= xc < w:
                    img[top:bottom, xc] = np.maximum(img[top:bottom, xc], level * wgt)
            xc = int(np.clip(x + jitter(), 0, w - 1))
            cores[ch["vertical_line"], top:bottom, xc] = True

    # Unlabeled focal clutter (compact bright blobs, unlike any of the six
    # line-shaped structures).  Their count/size/brightness variance swamps
    # the burden's footprint in global image statistics, so mean or variance
    # of the raw image alone carries no clinically usable signal.  Blobs keep
    # a margin from every labeled core so structure pixels stay brighter than
    # their local background.
    keep_out = ndimage.binary_dilation(
        cores.any(axis=0), structure=np.ones((3, 3), dtype=bool), iterations=8
    )
    n_blobs = int(rng.integers(25, 61))
    yy, xx = np.ogrid[:h, :w]
    for _ in range(n_blobs):
        for _attempt in range(20):
            bx = int(rng.integers(2, w - 2))
            by = int(rng.integers(2, h - 2))
            if not keep_out[by, bx]:
                break
        else:
            continue
        radius = rng.uniform(1.2, 3.0)
        amp = rng.uniform(60.0, 170.0)
        blob = amp * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * radius ** 2))
        img[:] = np.maximum(img, BG_LEVEL + blob)

    return Scene(structure=img, cores=cores, k=int(k))


def _speckled(structure: np.ndarray, rng: np.random.Generator, level: float) -> np.ndarray:
    noise = np.clip(rng.normal(0.0, 1.0, structure.shape), -3.0, 3.0)
    out = structure * (1.0 + level * noise)
    return np.clip(out, 0.0, 255.0).astype(np.uint8)


def gen_image(seed: int, spec: PhantomSpec):
    """One deterministic phantom frame plus its confidence labels."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(spec.b_line_count[0], spec.b_line_count[1] + 1))
    scene = render_scene(rng, spec, k)
    image = _speckled(scene.structure, rng, spec.speckle)
    return image, _labels_from_cores(scene.cores, spec.falloff)


def render_video(rng: np.random.Generator, spec: PhantomSpec, k: int):
    """T frames of one scene with slight vertical jitter; labels match frame 0."""
    scene = render_scene(rng, spec, k)
    frames = [_speckled(scene.structure, rng, spec.speckle)]
    for _ in range(1, spec.frames):
        dy = int(rng.integers(-1, 2))
        shifted = ndimage.shift(scene.structure, (dy, 0), order=0, cval=BG_LEVEL)
        frames.append(_speckled(shifted, rng, spec.speckle))
    return frames, _labels_from_cores(scene.cores, spec.falloff), scene


def planted_sf(k: int, eta: float) -> float:
    return float(np.clip(SF_INTERCEPT + SF_SLOPE * k + eta, *SF_CLIP))


def sample_cohort_metadata(seed: int, n_patients: int) -> list[dict]:
    """Per-patient planted clinical metadata (no rendering, no I/O)."""
    root = np.random.SeedSequence([int(seed), 0xC0F])
    out = []
    for idx, child in enumerate(root.spawn(n_patients)):
        rng = np.random.default_rng(child)
        k1 = int(rng.integers(0, 7))
        k2 = int(np.clip(k1 + rng.integers(-2, 3), 0, 6))
        eta1 = float(rng.normal(0.0, SF_NOISE_STD))
        eta2 = float(rng.normal(0.0, SF_NOISE_STD))
        p_readmit = READMIT_BASE + READMIT_SLOPE * k2
        out.append({
            "patient_id": f"P{idx:03d}",
            "k_day": [k1, k2],
            "eta": [eta1, eta2],
            "sf": [planted_sf(k1, eta1), planted_sf(k2, eta2)],
            "p_readmit": p_readmit,
            "readmitted": bool(rng.random() < p_readmit),
        })
    return out


def gen_cohort(seed: int, n_patients: int, spec: PhantomSpec, out_dir) -> CohortManifest:
    """Write a full synthetic cohort (images, labels, manifest) to disk.

    Per patient: 2 days x 6 views x 1 video of ``spec.frames`` frames.  The
    per-view burden is the day's k jittered by +-1.
    """
    if n_patients < 6:
        raise ValueError("cohort needs at least 6 patients")
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta_rows = sample_cohort_metadata(seed, n_patients)
    per_video_k: dict[str, int] = {}

    patients = []
    for p_idx, row in enumerate(meta_rows):
        pid = row["patient_id"]
        days = []
        for day in (1, 2):
            k_day = row["k_day"][day - 1]
            videos = []
            for v_idx, view in enumerate(VIEW_NAMES):
                vid = f"{pid}_d{day}_{view}"
                vdir = out_dir / "videos" / vid
                vdir.mkdir(parents=True, exist_ok=True)
                rng = np.random.default_rng(
                    np.random.SeedSequence([int(seed), 1, p_idx, day, v_idx])
                )
                k_view = int(np.clip(k_day + rng.integers(-1, 2), 0, 6))
                per_video_k[vid] = k_view
                frames, cmap, _ = render_video(rng, spec, k_view)
                refs = []
                for f_idx, frame in enumerate(frames):
                    ref = f"videos/{vid}/frame_{f_idx:03d}.pgm"
                    write_pgm(frame, out_dir / ref)
                    refs.append(ref)
                label_ref = f"videos/{vid}/label.cmap"
                write_cmap(cmap, out_dir / label_ref)
                videos.append(VideoEntry(
                    video_id=vid,
                    view=view,
                    zone=VIEW_ZONE[view],
                    frame_count=len(refs),
                    image_refs=refs,
                    label_ref=label_ref,
                ))
            days.append(DayRecord(
                day_index=day,
                sf_ratio_normalized=row["sf"][day - 1],
                videos=videos,
            ))
        patients.append(PatientRecord(
            patient_id=pid,
            readmission_flag=row["readmitted"],
            days=days,
        ))

    manifest = CohortManifest(
        patients=patients,
        meta={
            "generator": "phantom",
            "seed": int(seed),
            "spec": {
                "width": spec.width,
                "height": spec.height,
                "frames": spec.frames,
                "pleural_depth": list(spec.pleural_depth),
                "a_line_count": list(spec.a_line_count),
                "b_line_count": list(spec.b_line_count),
                "speckle": spec.speckle,
                "falloff": spec.falloff,
            },
            "planted_link": {
                "sf_intercept": SF_INTERCEPT,
                "sf_slope": SF_SLOPE,
                "eta_std": SF_NOISE_STD,
                "sf_clip": list(SF_CLIP),
                "readmit_base": READMIT_BASE,
                "readmit_slope": READMIT_SLOPE,
                "per_patient": {
                    row["patient_id"]: {
                        "k_day": row["k_day"],
                        "eta": row["eta"],
                        "p_readmit": row["p_readmit"],
                    }
                    for row in meta_rows
                },
                "per_video_k": per_video_k,
            },
        },
    )
    manifest.validate()
    write_manifest(manifest, out_dir / "cohort.json")
    return manifest
