"""Pipeline config file handling and the command-line front end."""

import os
import subprocess
import sys

import numpy as np
import pytest

from pixelvoxel.config import PipelineConfig, load_config, palette, save_config


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(num_classes=4, input_size=64, points=256,
                             pixel_lr=0.123, seed=11)
        path = str(tmp_path / "run.cfg")
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = str(tmp_path / "bad.cfg")
        with open(path, "w") as fh:
            fh.write("numclasses=4\n")
        with pytest.raises(ValueError, match="unknown"):
            load_config(path)

    def test_bad_value_diagnosed(self, tmp_path):
        path = str(tmp_path / "bad.cfg")
        with open(path, "w") as fh:
            fh.write("num_classes=many\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = str(tmp_path / "run.cfg")
        with open(path, "w") as fh:
            fh.write("# a comment\n\nnum_classes=3\n")
        assert load_config(path).num_classes == 3

    def test_palette_shape(self):
        pal = palette(6)
        assert pal.shape == (6, 3)
        assert pal.dtype == np.uint8
        assert len({tuple(row) for row in pal}) == 6


def _run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "pixelvoxel.cli", *args],
        capture_output=True, text=True)


class TestCli:
    def test_no_command_exits_nonzero(self):
        proc = _run_cli()
        assert proc.returncode != 0

    def test_synth_creates_dataset(self, tmp_path):
        cfg_path = str(tmp_path / "run.cfg")
        save_config(PipelineConfig(input_size=32, num_classes=6), cfg_path)
        out = str(tmp_path / "scene")
        proc = _run_cli("synth", "--frames", "2", "--seed", "4",
                        "--out", out, "--config", cfg_path)
        assert proc.returncode == 0, proc.stderr
        assert os.path.isdir(os.path.join(out, "rgb"))

    def test_train_rejects_bad_stage(self, tmp_path):
        proc = _run_cli("train", "--stage", "bogus",
                        "--data", str(tmp_path), "--out", "x.ckpt")
        assert proc.returncode != 0

    def test_missing_data_is_one_line_error(self, tmp_path):
        proc = _run_cli("train", "--stage", "pixel",
                        "--data", str(tmp_path / "nope"),
                        "--out", str(tmp_path / "x.ckpt"))
        assert proc.returncode == 1
        assert proc.stderr.strip().startswith("error:")
        assert "Traceback" not in proc.stderr

    def test_eval_missing_checkpoint(self, tmp_path):
        proc = _run_cli("eval", "--data", str(tmp_path),
                        "--ckpt", str(tmp_path / "missing.ckpt"))
        assert proc.returncode == 1
        assert proc.stderr.strip().startswith("error:")
