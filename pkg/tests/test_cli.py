import json
from pathlib import Path

import numpy as np
import pytest

from confseg.cli import main
from confseg.dataio import read_pgm, write_cmap
from confseg.labels import CHANNEL_NAMES, NUM_CHANNELS, ConfidenceMap
from confseg.phantom import PhantomSpec, gen_cohort


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_cohort")
    spec = PhantomSpec(width=32, height=32, frames=2, pleural_depth=(10, 14))
    gen_cohort(5, 8, spec, out)
    return out


@pytest.fixture()
def seg_config(cohort_dir, tmp_path):
    cfg = {
        "cohort": str(cohort_dir),
        "out_dir": str(tmp_path / "run"),
        "task": "seg",
        "thresholds": [0, 100],
        "fold_count": 3,
        "test_patients": 2,
        "folds": [0],
        "seed": 5,
        "seg": {"epochs": 2, "batch_size": 8, "lr": 1e-3, "augment": True},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestPhantomGenAndSplit:
    def test_phantom_gen_writes_cohort(self, tmp_path):
        cfg = {
            "out_dir": str(tmp_path / "c"),
            "phantom": {"patients": 6, "width": 32, "height": 32, "frames": 1,
                        "pleural_depth": [10, 14]},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        code = main(["phantom-gen", "--config", str(path), "--seed", "2",
                     "--out", str(tmp_path / "c")])
        assert code == 0
        assert (tmp_path / "c" / "cohort.json").exists()

    def test_split_writes_folds(self, cohort_dir, tmp_path):
        cfg = {"cohort": str(cohort_dir), "fold_count": 3, "test_patients": 2}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["split", "--config", str(path)]) == 0
        assert (cohort_dir / "folds.json").exists()


class TestTrainSeg:
    def test_structural_csv_and_determinism(self, seg_config, tmp_path):
        cfg_path, cfg = seg_config
        assert main(["train-seg", "--config", str(cfg_path)]) == 0
        out = Path(cfg["out_dir"])
        csv_text = (out / "results.csv").read_bytes()

        # 2 thresholds x 1 fold x (4 metrics + 6 per-channel iou) rows
        data_lines = [
            line for line in csv_text.decode().splitlines()
            if line and not line.startswith("#") and not line.startswith("task,")
        ]
        assert len(data_lines) == 2 * (4 + NUM_CHANNELS)
        assert (out / "table.txt").exists()
        assert (out / "sweep_iou.svg").exists()
        assert (out / "seg_t0_f0.ckpt").exists()

        # rerunning the identical config must reproduce the CSV byte for byte
        assert main(["train-seg", "--config", str(cfg_path)]) == 0
        assert (out / "results.csv").read_bytes() == csv_text

    def test_header_is_self_describing(self, seg_config):
        cfg_path, cfg = seg_config
        assert main(["train-seg", "--config", str(cfg_path)]) == 0
        text = (Path(cfg["out_dir"]) / "results.csv").read_text()
        assert "# config_hash=" in text
        assert "# seed=5" in text
        assert "# deviation=" in text

    def test_eval_seg_checkpoint(self, seg_config, tmp_path):
        cfg_path, cfg = seg_config
        assert main(["train-seg", "--config", str(cfg_path)]) == 0
        ckpt = Path(cfg["out_dir"]) / "seg_t0_f0.ckpt"
        out2 = tmp_path / "evalout"
        assert main(["eval-seg", "--config", str(cfg_path), "--out", str(out2),
                     "--checkpoint", str(ckpt), "--threshold", "0"]) == 0
        assert (out2 / "results.csv").exists()


class TestTrainTask:
    def test_sf_regress_short_run(self, cohort_dir, tmp_path):
        cfg = {
            "cohort": str(cohort_dir),
            "out_dir": str(tmp_path / "reg"),
            "task": "sf_regress",
            "thresholds": [60],
            "fold_count": 3,
            "test_patients": 2,
            "folds": [0],
            "seed": 1,
            "task_train": {"epochs": 1, "lr": 1e-4, "seg_source": "oracle",
                           "max_frames": 1},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["train-task", "--config", str(path)]) == 0
        text = (tmp_path / "reg" / "results.csv").read_text()
        assert "rmse_avg" in text
        assert (tmp_path / "reg" / "sweep_rmse_avg.svg").exists()

    def test_unknown_task_rejected(self, cohort_dir, tmp_path):
        cfg = {"cohort": str(cohort_dir), "task": "seg"}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        with pytest.raises(SystemExit):
            main(["train-task", "--config", str(path)])


class TestThresholdTool:
    def test_writes_six_masks(self, tmp_path):
        values = np.zeros((NUM_CHANNELS, 4, 4), dtype=np.uint8)
        values[0, 1, 1] = 60
        values[5, 2, 2] = 100
        cmap_path = tmp_path / "label.cmap"
        write_cmap(ConfidenceMap(values), cmap_path)
        out = tmp_path / "masks"
        assert main(["threshold", str(cmap_path), "60", "--out", str(out)]) == 0
        files = sorted(out.glob("*.pgm"))
        assert len(files) == NUM_CHANNELS
        mask0 = read_pgm(out / f"label_t60_{CHANNEL_NAMES[0]}.pgm")
        assert mask0[1, 1] == 255
        assert mask0.sum() == 255

    def test_zero_threshold_on_all_zero_map(self, tmp_path):
        cmap_path = tmp_path / "z.cmap"
        write_cmap(ConfidenceMap.zeros(4, 4), cmap_path)
        out = tmp_path / "masks"
        assert main(["threshold", str(cmap_path), "0", "--out", str(out)]) == 0
        for name in CHANNEL_NAMES:
            assert read_pgm(out / f"z_t0_{name}.pgm").sum() == 0

    def test_sweep_is_monotone(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.choice([0, 20, 40, 50, 60, 80, 100], (NUM_CHANNELS, 6, 6))
        cmap_path = tmp_path / "r.cmap"
        write_cmap(ConfidenceMap(values.astype(np.uint8)), cmap_path)
        out = tmp_path / "masks"
        previous = None
        for t in (0, 20, 40, 50, 60, 80, 100):
            assert main(["threshold", str(cmap_path), str(t), "--out", str(out)]) == 0
            total = sum(
                int((read_pgm(out / f"r_t{t}_{name}.pgm") > 0).sum())
                for name in CHANNEL_NAMES
            )
            if previous is not None:
                assert total <= previous
            previous = total

    def test_off_grid_threshold_is_usage_error(self, tmp_path):
        cmap_path = tmp_path / "z.cmap"
        write_cmap(ConfidenceMap.zeros(2, 2), cmap_path)
        assert main(["threshold", str(cmap_path), "37"]) == 2


class TestConfig:
    def test_print_config_defaults(self, capsys):
        assert main(["print-config"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["thresholds"] == [0, 20, 40, 50, 60, 80, 100]
        assert doc["seg"]["epochs"] == 30

    def test_unknown_config_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"nonsense": 1}))
        with pytest.raises(KeyError):
            main(["print-config", "--config", str(path)])

    def test_env_fallback_for_cohort(self, cohort_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("CONFSEG_DATA_DIR", str(cohort_dir))
        cfg = {"fold_count": 3, "test_patients": 2}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["split", "--config", str(path)]) == 0

    def test_off_grid_threshold_in_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"thresholds": [0, 37]}))
        with pytest.raises(ValueError, match="fixed set"):
            main(["print-config", "--config", str(path)])
