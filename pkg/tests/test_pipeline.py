"""Dataset plumbing: loading, augmentation, splits, stage checkpoints."""

import numpy as np
import pytest

from pixelvoxel import pipeline as P
from pixelvoxel.config import PipelineConfig
from pixelvoxel.synth import synth_scene


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    cfg = PipelineConfig(input_size=32, num_classes=6, points=128)
    out = str(tmp_path_factory.mktemp("scene") / "data")
    synth_scene(2, 6, cfg, out)
    return cfg, out


class TestLoading:
    def test_records_in_frame_order(self, tiny_dataset):
        _, data = tiny_dataset
        records, intr = P.load_records(data)
        assert len(records) == 6
        assert intr.width == 32
        stamps = [r.timestamp for r in records]
        assert stamps == sorted(stamps)

    def test_preprocess_shapes(self, tiny_dataset):
        cfg, data = tiny_dataset
        records, intr = P.load_records(data)
        frame = P.preprocess_frame(records[0], cfg, intr)
        assert frame.rgb.shape == (32, 32, 3)
        assert frame.labels.shape == (32, 32)
        assert frame.cloud.xyz.shape == (cfg.points, 3)
        assert frame.point_labels.shape == (cfg.points,)

    def test_point_labels_match_pixel_labels(self, tiny_dataset):
        cfg, data = tiny_dataset
        records, intr = P.load_records(data)
        frame = P.preprocess_frame(records[0], cfg, intr)
        u, v = frame.cloud.pixels[:, 0], frame.cloud.pixels[:, 1]
        np.testing.assert_array_equal(frame.point_labels,
                                      frame.labels[v, u])


class TestSplit:
    def test_every_kth_frame_held_out(self):
        records = [P.FrameRecord("r", "d", "l", float(i))
                   for i in range(10)]
        train, held = P.split_records(records, 5)
        assert len(held) == 2
        assert [r.timestamp for r in held] == [4.0, 9.0]
        assert len(train) + len(held) == 10

    def test_disjoint(self):
        records = [P.FrameRecord("r", "d", "l", float(i))
                   for i in range(7)]
        train, held = P.split_records(records, 3)
        assert not ({r.timestamp for r in train}
                    & {r.timestamp for r in held})


class TestAugmentation:
    def test_flip_mirrors_labels_and_negates_x(self, tiny_dataset):
        cfg, data = tiny_dataset
        records, intr = P.load_records(data)
        frame = P.preprocess_frame(records[0], cfg, intr)
        flipped = P.flip_frame(frame, cfg.input_size)
        np.testing.assert_array_equal(flipped.labels, frame.labels[:, ::-1])
        np.testing.assert_allclose(flipped.cloud.xyz[:, 0],
                                   -frame.cloud.xyz[:, 0])
        np.testing.assert_array_equal(flipped.point_labels,
                                      frame.point_labels)

    def test_flip_keeps_point_pixel_consistency(self, tiny_dataset):
        cfg, data = tiny_dataset
        records, intr = P.load_records(data)
        frame = P.preprocess_frame(records[0], cfg, intr)
        flipped = P.flip_frame(frame, cfg.input_size)
        u, v = flipped.cloud.pixels[:, 0], flipped.cloud.pixels[:, 1]
        np.testing.assert_array_equal(flipped.point_labels,
                                      flipped.labels[v, u])


class TestStageCheckpoints:
    def test_pixel_subset_excludes_voxel_branch(self, tiny_dataset, tmp_path):
        cfg, data = tiny_dataset
        cfg2 = PipelineConfig(**{**cfg.__dict__, "pixel_epochs": 1,
                                 "batch_size": 2})
        res = P.train_stage("pixel", cfg2, data, str(tmp_path / "p.ckpt"))
        from pixelvoxel.autodiff import load_checkpoint
        names = load_checkpoint(res.checkpoint_path)
        assert any(n.startswith("pixelnet.") for n in names)
        assert not any(n.startswith("voxelnet.") for n in names)

    def test_voxel_subset_excludes_pixel_branch(self, tiny_dataset, tmp_path):
        cfg, data = tiny_dataset
        cfg2 = PipelineConfig(**{**cfg.__dict__, "voxel_epochs": 1,
                                 "batch_size": 2})
        res = P.train_stage("voxel", cfg2, data, str(tmp_path / "v.ckpt"))
        from pixelvoxel.autodiff import load_checkpoint
        names = load_checkpoint(res.checkpoint_path)
        assert any(n.startswith("voxelnet.") for n in names)
        assert not any(n.startswith("pixelnet.") for n in names)

    def test_unknown_stage_rejected(self, tiny_dataset, tmp_path):
        cfg, data = tiny_dataset
        with pytest.raises(ValueError):
            P.train_stage("finetune", cfg, data, str(tmp_path / "x.ckpt"))
