"""Result tables and plots: long-format CSV, aligned text, SVG sweeps.

Every artifact starts with a self-describing comment header (config hash,
seed, declared desk-scale deviations) and is byte-deterministic for a given
config and seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

DEVIATIONS = (
    "resolution 64x64 synthetic phantom (desk scale)",
    "regression head widths 32/16 (desk scale analogue of 256/64)",
    "tiny from-scratch encoders stand in for pretrained backbones",
)

# Loss columns in reports average over all 6 channels, labeled or not.
METRIC_NOTE = "losses average over all 6 channels"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.10g}"
    return str(value)


def report_header(cfg_hash: str, seed: int) -> list[str]:
    lines = [
        f"# config_hash={cfg_hash}",
        f"# seed={seed}",
        f"# note={METRIC_NOTE}",
    ]
    lines += [f"# deviation={d}" for d in DEVIATIONS]
    return lines


def write_results_csv(path, rows: list[dict], cfg_hash: str, seed: int) -> None:
    """Long-format results: one (fold, threshold, metric, value) per row."""
    lines = report_header(cfg_hash, seed)
    lines.append("task,threshold,fold,metric,value")
    for row in rows:
        lines.append(
            f"{row['task']},{row['threshold']},{row['fold']},"
            f"{row['metric']},{_fmt(row['value'])}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results_csv(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("task,"):
            continue
        task, threshold, fold, metric, value = line.split(",")
        rows.append({
            "task": task,
            "threshold": int(threshold),
            "fold": int(fold),
            "metric": metric,
            "value": float(value),
        })
    return rows


def aggregate(rows: list[dict]) -> dict:
    """mean and 1-sigma stdev across folds, keyed (threshold, metric)."""
    buckets: dict[tuple, list[float]] = {}
    for row in rows:
        buckets.setdefault((row["threshold"], row["metric"]), []).append(row["value"])
    out = {}
    for key, values in buckets.items():
        clean = [v for v in values if not math.isnan(v)]
        if not clean:
            out[key] = (float("nan"), float("nan"))
            continue
        n = len(clean)
        mean = sum(clean) / n
        if n > 1:
            var = sum((v - mean) ** 2 for v in clean) / (n - 1)
            std = math.sqrt(var)
        else:
            std = 0.0
        out[key] = (mean, std)
    return out


def _threshold_label(t: int) -> str:
    if t == 0:
        return "> 0%"
    if t == 100:
        return "= 100%"
    return f">= {t}%"


def text_table(rows: list[dict], metrics: list[str], cfg_hash: str, seed: int,
               title: str) -> str:
    """Aligned mean +- stdev table, one row per threshold."""
    agg = aggregate(rows)
    thresholds = sorted({r["threshold"] for r in rows})
    header = ["threshold"] + metrics
    body = []
    for t in thresholds:
        cells = [_threshold_label(t)]
        for m in metrics:
            mean, std = agg.get((t, m), (float("nan"), float("nan")))
            cells.append("nan" if math.isnan(mean) else f"{mean:.4f} +- {std:.4f}")
        body.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(header)]
    lines = report_header(cfg_hash, seed)
    lines.append(f"# {title}")
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# SVG threshold sweeps (hand-rolled for byte determinism)

_SVG_W, _SVG_H = 520, 340
_MARGIN = 56


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def svg_sweep(path, rows: list[dict], metric: str, title: str) -> None:
    """One metric vs threshold, mean line with 1-sigma error bars."""
    agg = aggregate(rows)
    thresholds = sorted({r["threshold"] for r in rows
                         if r["metric"] == metric and not math.isnan(r["value"])})
    if not thresholds:
        Path(path).write_text(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}">'
            f'<text x="20" y="30">no data for {metric}</text></svg>\n',
            encoding="utf-8",
        )
        return
    means = [agg[(t, metric)][0] for t in thresholds]
    stds = [agg[(t, metric)][1] for t in thresholds]
    lo = min(m - s for m, s in zip(means, stds))
    hi = max(m + s for m, s in zip(means, stds))
    pad = (hi - lo) * 0.1 or 0.05
    lo, hi = lo - pad, hi + pad
    xs = _scale(thresholds, 0, 100, _MARGIN, _SVG_W - 20)
    ys = _scale(means, lo, hi, _SVG_H - _MARGIN, 20)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        'font-family="monospace" font-size="12">',
        f'<text x="{_MARGIN}" y="14">{title}</text>',
        f'<line x1="{_MARGIN}" y1="20" x2="{_MARGIN}" y2="{_SVG_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_SVG_H - _MARGIN}" x2="{_SVG_W - 20}" '
        f'y2="{_SVG_H - _MARGIN}" stroke="black"/>',
    ]
    for t, x in zip(thresholds, xs):
        parts.append(
            f'<text x="{x:.1f}" y="{_SVG_H - _MARGIN + 16}" text-anchor="middle">{t}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        v = lo + (hi - lo) * frac
        y = _scale([v], lo, hi, _SVG_H - _MARGIN, 20)[0]
        parts.append(
            f'<text x="{_MARGIN - 6}" y="{y:.1f}" text-anchor="end">{v:.3f}</text>'
        )
    for x, y, m, s in zip(xs, ys, means, stds):
        if s > 0:
            y0 = _scale([m - s], lo, hi, _SVG_H - _MARGIN, 20)[0]
            y1 = _scale([m + s], lo, hi, _SVG_H - _MARGIN, 20)[0]
            parts.append(
                f'<line x1="{x:.1f}" y1="{y0:.1f}" x2="{x:.1f}" y2="{y1:.1f}" '
                'stroke="steelblue"/>'
            )
    points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    parts.append(
        f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>'
    )
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="steelblue"/>')
    parts.append(f'<text x="{_SVG_W - 20}" y="{_SVG_H - 8}" text-anchor="end">confidence threshold (%)</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
