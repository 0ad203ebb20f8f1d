"""Experiment orchestration CLI.

Subcommands: phantom-gen, split, train-seg, eval-seg, train-task, eval-task,
report, threshold, gradcheck, serve, print-config.  Runs are driven by a
JSON config (see DEFAULT_CONFIG); every run is deterministic for a given
config and seed and emits CSV + text tables + SVG threshold sweeps.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from confseg import report as rpt
from confseg.dataio import (
    CohortManifest,
    FoldSplit,
    read_cmap,
    read_manifest,
    read_pgm,
    read_split,
    split_folds,
    write_pgm,
    write_split,
)
from confseg.labels import CHANNEL_NAMES, THRESHOLD_LEVELS, ConfidenceMap, threshold_map
from confseg.metrics import evaluate_seg
from confseg.segmodel import SegTrainConfig, TinyFPN, infer_seg, train_seg
from confseg.tensornet import load_checkpoint, save_checkpoint

DEFAULT_CONFIG = {
    "cohort": None,                # dir containing cohort.json; falls back to CONFSEG_DATA_DIR
    "out_dir": "confseg-out",
    "task": "seg",                 # seg | sf_change | sf_regress | readmission
    "thresholds": [0, 20, 40, 50, 60, 80, 100],
    "fold_count": 6,
    "test_patients": 4,
    "folds": [0],                  # validation fold indices to run
    "seed": 7,
    "seg": {
        # Desk-scale phantom settings; SegTrainConfig defaults mirror the
        # full-scale recipe (100 epochs at lr 1e-4) instead.
        "epochs": 30,
        "batch_size": 16,
        "lr": 0.01,
        "lr_min": 0.0,
        "augment": True,
    },
    "task_train": {
        "epochs": 6,
        "lr": 1e-4,                # the experiments use 1e-4 or 1e-5
        "lr_min": 0.0,
        "restart_period": 4,
        "restart_mult": 2,
        "pair_cap_train": 2000,
        "pair_cap_val": 200,
        "pair_cap_test": 100,
        "seg_source": "oracle",    # oracle | zero | model
        "seg_checkpoints": {},     # threshold (str) -> checkpoint path, for seg_source=model
        "max_frames": None,
    },
    "phantom": {
        "patients": 60,
        "width": 64,
        "height": 64,
        "frames": 8,
        "pleural_depth": [18, 28],
        "speckle": 0.25,
        "falloff": 4,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise KeyError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path:
        cfg = _merge(cfg, json.loads(Path(path).read_text(encoding="utf-8")))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    if cfg["cohort"] is None:
        cfg["cohort"] = os.environ.get("CONFSEG_DATA_DIR")
    for t in cfg["thresholds"]:
        if t not in THRESHOLD_LEVELS:
            raise ValueError(f"threshold {t} not in the fixed set {THRESHOLD_LEVELS}")
    return cfg


def _require_cohort(cfg: dict) -> Path:
    if not cfg["cohort"]:
        raise SystemExit("no cohort directory: pass --config with 'cohort' or set CONFSEG_DATA_DIR")
    root = Path(cfg["cohort"])
    if not (root / "cohort.json").exists():
        raise SystemExit(f"no cohort.json under {root}")
    return root


def _load_split(cfg: dict, manifest: CohortManifest, root: Path) -> FoldSplit:
    split_path = root / "folds.json"
    if split_path.exists():
        return read_split(split_path)
    split = split_folds(manifest, cfg["fold_count"], cfg["test_patients"], cfg["seed"])
    write_split(split, split_path)
    return split


def _first_frames(manifest: CohortManifest, root: Path, patient_ids):
    wanted = set(patient_ids)
    out = []
    for p in manifest.patients:
        if p.patient_id not in wanted:
            continue
        for d in p.days:
            for v in d.videos:
                out.append((read_pgm(root / v.image_refs[0]),
                            read_cmap(root / v.label_ref)))
    return out


# ---------------------------------------------------------------------------
# seg task

def run_seg(cfg: dict, out_dir: Path) -> list[dict]:
    root = _require_cohort(cfg)
    manifest = read_manifest(root / "cohort.json")
    split = _load_split(cfg, manifest, root)
    rows: list[dict] = []
    for threshold in cfg["thresholds"]:
        for fold in cfg["folds"]:
            seg_cfg = SegTrainConfig(
                threshold=threshold,
                epochs=cfg["seg"]["epochs"],
                batch_size=cfg["seg"]["batch_size"],
                lr=cfg["seg"]["lr"],
                lr_min=cfg["seg"]["lr_min"],
                seed=cfg["seed"] + fold,
                augment=cfg["seg"]["augment"],
            )
            train = _first_frames(manifest, root, split.training_ids(fold))
            val = _first_frames(manifest, root, split.folds[fold])
            result = train_seg(seg_cfg, train, val)
            ckpt_path = out_dir / f"seg_t{threshold}_f{fold}.ckpt"
            save_checkpoint(ckpt_path, result.checkpoint)
            rows.extend(_eval_seg_rows(
                result.model, manifest, root, split.held_out_test, threshold, fold
            ))
            print(f"[seg] threshold={threshold} fold={fold} "
                  f"best_epoch={result.best_epoch} ckpt={ckpt_path.name}")
    return rows


def _eval_seg_rows(model: TinyFPN, manifest, root, patient_ids, threshold, fold):
    test = _first_frames(manifest, root, patient_ids)
    metrics = {"iou": [], "weighted_ce": [], "soft_ce": [], "trimap_loss": []}
    per_channel = []
    for img, cmap in test:
        prob, _ = infer_seg(model, img)
        scores = evaluate_seg(prob, cmap, threshold)
        for key in metrics:
            metrics[key].append(scores[key])
        per_channel.append(scores["iou_per_channel"])
    rows = [
        {"task": "seg", "threshold": threshold, "fold": fold,
         "metric": key, "value": float(np.nanmean(values))}
        for key, values in metrics.items()
    ]
    mean_pc = np.nanmean(np.stack(per_channel), axis=0)
    rows.extend(
        {"task": "seg", "threshold": threshold, "fold": fold,
         "metric": f"iou_{name}", "value": float(v)}
        for name, v in zip(CHANNEL_NAMES, mean_pc)
    )
    return rows


def eval_seg_checkpoint(cfg: dict, ckpt_path: str, threshold: int, fold: int) -> list[dict]:
    root = _require_cohort(cfg)
    manifest = read_manifest(root / "cohort.json")
    split = _load_split(cfg, manifest, root)
    model = TinyFPN(seed=0)
    params, _ = load_checkpoint(ckpt_path)
    model.load_state_dict(params)
    return _eval_seg_rows(model, manifest, root, split.held_out_test, threshold, fold)


# ---------------------------------------------------------------------------
# downstream tasks

def _fused_source(cfg: dict, manifest, root, threshold: int):
    from confseg.downstream import FusedVideoSource

    tt = cfg["task_train"]
    seg_model = None
    if tt["seg_source"] == "model":
        ckpts = tt["seg_checkpoints"]
        key = str(threshold)
        if key not in ckpts:
            raise SystemExit(f"seg_source=model but no checkpoint for threshold {threshold}")
        seg_model = TinyFPN(seed=0)
        params, _ = load_checkpoint(ckpts[key])
        seg_model.load_state_dict(params)
    return FusedVideoSource(
        manifest, root, seg_source=tt["seg_source"], seg_model=seg_model,
        max_frames=tt["max_frames"],
    )


def run_task(cfg: dict, out_dir: Path) -> list[dict]:
    from confseg import downstream as ds

    task = cfg["task"]
    root = _require_cohort(cfg)
    manifest = read_manifest(root / "cohort.json")
    split = _load_split(cfg, manifest, root)
    tt = cfg["task_train"]
    rows: list[dict] = []
    for threshold in cfg["thresholds"]:
        source = _fused_source(cfg, manifest, root, threshold)
        for fold in cfg["folds"]:
            tcfg = ds.TaskTrainConfig(
                epochs=tt["epochs"], lr=tt["lr"], lr_min=tt["lr_min"],
                restart_period=tt["restart_period"], restart_mult=tt["restart_mult"],
                seed=cfg["seed"] + fold,
            )
            train_ids = split.training_ids(fold)
            test_ids = split.held_out_test
            if task == "sf_change":
                pairs = ds.build_pairs(manifest, train_ids, "train",
                                       tcfg.seed, tt["pair_cap_train"])
                test_pairs = ds.build_pairs(manifest, test_ids, "test",
                                            tcfg.seed, tt["pair_cap_test"])
                model = ds.train_change(source, pairs, tcfg)
                scores = ds.eval_change(model, source, test_pairs)
                metrics = {"acc3": scores["acc3"], "acc2": scores["acc2"]}
                ckpt = model.state_dict()
            elif task == "sf_regress":
                model = ds.train_regression(source, manifest, train_ids, tcfg)
                metrics = ds.eval_regression(model, source, manifest, test_ids)
                ckpt = model.state_dict()
            elif task == "readmission":
                warm = None
                warm_path = out_dir / f"sf_change_t{threshold}_f{fold}.ckpt"
                if warm_path.exists():
                    warm, _ = load_checkpoint(warm_path)
                model = ds.train_readmission(source, manifest, train_ids, tcfg,
                                             warm_start=warm)
                scores = ds.eval_readmission(model, source, manifest, test_ids)
                metrics = {
                    "accuracy": scores["accuracy"],
                    "recall": scores["recall"],
                    "precision": (float("nan") if scores["precision"] is None
                                  else scores["precision"]),
                }
                ckpt = model.state_dict()
            else:
                raise SystemExit(f"unknown task {task!r}")
            save_checkpoint(out_dir / f"{task}_t{threshold}_f{fold}.ckpt", ckpt)
            rows.extend(
                {"task": task, "threshold": threshold, "fold": fold,
                 "metric": name, "value": value}
                for name, value in metrics.items()
            )
            printable = {k: round(v, 4) for k, v in metrics.items()}
            print(f"[{task}] threshold={threshold} fold={fold} {printable}")
    return rows


TASK_METRICS = {
    "seg": ["iou", "weighted_ce", "soft_ce", "trimap_loss"],
    "sf_change": ["acc3", "acc2"],
    "sf_regress": ["rmse_max", "rmse_avg", "rmse_median"],
    "readmission": ["accuracy", "recall", "precision"],
}

TASK_TITLES = {
    "seg": "Segmentation performance across confidence thresholds",
    "sf_change": "S/F change classification across confidence thresholds",
    "sf_regress": "S/F estimation RMSE across confidence thresholds",
    "readmission": "30-day readmission prediction across confidence thresholds",
}


def emit_reports(cfg: dict, rows: list[dict], out_dir: Path) -> None:
    task = cfg["task"]
    cfg_hash = rpt.config_hash(cfg)
    seed = cfg["seed"]
    rpt.write_results_csv(out_dir / "results.csv", rows, cfg_hash, seed)
    metrics = TASK_METRICS[task]
    table = rpt.text_table(rows, metrics, cfg_hash, seed, TASK_TITLES[task])
    (out_dir / "table.txt").write_text(table, encoding="utf-8")
    for metric in metrics:
        rpt.svg_sweep(out_dir / f"sweep_{metric}.svg", rows, metric,
                      f"{task}: {metric} vs confidence threshold")
    print(table)


# ---------------------------------------------------------------------------
# subcommands

def cmd_phantom_gen(args) -> int:
    from confseg.phantom import PhantomSpec, gen_cohort

    cfg = load_config(args.config, {"seed": args.seed, "out_dir": args.out})
    ph = cfg["phantom"]
    spec = PhantomSpec(width=ph["width"], height=ph["height"], frames=ph["frames"],
                       pleural_depth=tuple(ph["pleural_depth"]),
                       speckle=ph["speckle"], falloff=ph["falloff"])
    out = Path(args.out or cfg["out_dir"])
    manifest = gen_cohort(cfg["seed"], ph["patients"], spec, out)
    videos = sum(len(d.videos) for p in manifest.patients for d in p.days)
    print(f"wrote {len(manifest.patients)} patients / {videos} videos to {out}")
    return 0


def cmd_split(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "cohort": args.cohort})
    root = _require_cohort(cfg)
    manifest = read_manifest(root / "cohort.json")
    split = split_folds(manifest, cfg["fold_count"], cfg["test_patients"], cfg["seed"])
    write_split(split, root / "folds.json")
    sizes = [len(f) for f in split.folds]
    print(f"test={len(split.held_out_test)} patients, cv folds={sizes} -> folds.json")
    return 0


def _run_and_report(cfg: dict, runner) -> int:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        rows = runner(cfg, out_dir)
    except (RuntimeError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    emit_reports(cfg, rows, out_dir)
    return 0


def cmd_train_seg(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "cohort": args.cohort})
    if args.out:
        cfg["out_dir"] = args.out
    cfg["task"] = "seg"
    return _run_and_report(cfg, run_seg)


def cmd_eval_seg(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "cohort": args.cohort})
    if args.out:
        cfg["out_dir"] = args.out
    cfg["task"] = "seg"
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = eval_seg_checkpoint(cfg, args.checkpoint, args.threshold, fold=0)
    emit_reports(cfg, rows, out_dir)
    return 0


def cmd_train_task(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "cohort": args.cohort})
    if args.out:
        cfg["out_dir"] = args.out
    if args.task:
        cfg["task"] = args.task
    if cfg["task"] not in ("sf_change", "sf_regress", "readmission"):
        raise SystemExit(f"train-task handles downstream tasks, not {cfg['task']!r}")
    return _run_and_report(cfg, run_task)


def cmd_eval_task(args) -> int:
    from confseg import downstream as ds

    cfg = load_config(args.config, {"seed": args.seed, "cohort": args.cohort})
    if args.task:
        cfg["task"] = args.task
    task = cfg["task"]
    root = _require_cohort(cfg)
    manifest = read_manifest(root / "cohort.json")
    split = _load_split(cfg, manifest, root)
    source = _fused_source(cfg, manifest, root, args.threshold)
    params, _ = load_checkpoint(args.checkpoint)
    test_ids = split.held_out_test
    if task == "sf_change":
        model = ds.ChangeModel(seed=0)
        model.load_state_dict(params)
        pairs = ds.build_pairs(manifest, test_ids, "test", cfg["seed"],
                               cfg["task_train"]["pair_cap_test"])
        scores = ds.eval_change(model, source, pairs)
        print(json.dumps({"acc3": scores["acc3"], "acc2": scores["acc2"]}, indent=2))
    elif task == "sf_regress":
        model = ds.RegressionModel(seed=0)
        model.load_state_dict(params)
        print(json.dumps(ds.eval_regression(model, source, manifest, test_ids), indent=2))
    elif task == "readmission":
        model = ds.ReadmissionModel(seed=0)
        model.load_state_dict(params)
        print(json.dumps(ds.eval_readmission(model, source, manifest, test_ids), indent=2))
    else:
        raise SystemExit(f"unknown task {task!r}")
    return 0


def cmd_report(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    if args.task:
        cfg["task"] = args.task
    out_dir = Path(args.out or cfg["out_dir"])
    rows = rpt.read_results_csv(out_dir / "results.csv")
    emit_reports(cfg, rows, out_dir)
    return 0


def cmd_threshold(args) -> int:
    if args.t not in THRESHOLD_LEVELS:
        print(f"threshold {args.t} not in the fixed set {THRESHOLD_LEVELS}",
              file=sys.stderr)
        return 2
    cmap = read_cmap(args.cmap)
    mask = threshold_map(cmap, args.t)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.cmap).stem
    for i, name in enumerate(CHANNEL_NAMES):
        path = out / f"{stem}_t{args.t}_{name}.pgm"
        write_pgm(mask[i] * 255, path)
    print(f"wrote 6 masks for t={args.t} to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from confseg.acceptance_checks import gradcheck_all

    failures, worst = gradcheck_all(verbose=True)
    print(f"worst relative error: {worst:.3e}")
    return 0 if not failures else 1


def cmd_serve(args) -> int:
    from confseg.service import serve

    serve(args.data_dir, host=args.bind, port=args.port, ui_dir=args.ui_dir)
    return 0


def cmd_print_config(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confseg",
        description="Confidence-aware LUS segmentation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cohort=True):
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="reserved for parallel (threshold, fold) dispatch")
        if cohort:
            p.add_argument("--cohort", default=None,
                           help="cohort dir (fallback: CONFSEG_DATA_DIR)")

    p = sub.add_parser("phantom-gen", help="generate a synthetic cohort")
    common(p, cohort=False)
    p.set_defaults(fn=cmd_phantom_gen)

    p = sub.add_parser("split", help="write patient-wise folds.json")
    common(p)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train-seg", help="train + evaluate the threshold sweep")
    common(p)
    p.set_defaults(fn=cmd_train_seg)

    p = sub.add_parser("eval-seg", help="evaluate a saved seg checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=int, required=True)
    p.set_defaults(fn=cmd_eval_seg)

    p = sub.add_parser("train-task", help="train + evaluate a downstream task")
    common(p)
    p.add_argument("--task", choices=["sf_change", "sf_regress", "readmission"])
    p.set_defaults(fn=cmd_train_task)

    p = sub.add_parser("eval-task", help="evaluate a saved task checkpoint")
    common(p)
    p.add_argument("--task", choices=["sf_change", "sf_regress", "readmission"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=int, default=60)
    p.set_defaults(fn=cmd_eval_task)

    p = sub.add_parser("report", help="re-render tables and plots from results.csv")
    common(p)
    p.add_argument("--task", choices=list(TASK_METRICS))
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("threshold", help="threshold a .cmap into per-channel masks")
    p.add_argument("cmap")
    p.add_argument("t", type=int)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_threshold)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("data_dir")
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8289)
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("print-config", help="print the effective config")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_print_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
