"""Class-weighted loss, LR schedules and segmentation metrics."""

import numpy as np
import pytest

from pixelvoxel.autodiff import Tensor
from pixelvoxel.losses import (
    IGNORE_LABEL,
    ClassStats,
    ConfusionMatrix,
    class_frequencies,
    class_weight,
    lr_poly,
    lr_step,
    seg_metrics,
    weighted_nll_loss,
)


class TestClassWeight:
    def test_oracle_triplet(self):
        assert class_weight(0.025) == 1.0
        assert class_weight(0.30) == 0.5
        assert class_weight(0.001) == 4.0

    def test_monotone_nonincreasing(self):
        grid = np.linspace(1e-4, 1.0, 1000)
        weights = [class_weight(p) for p in grid]
        assert all(a >= b for a, b in zip(weights, weights[1:]))

    def test_powers_of_two(self):
        for p in (0.5, 0.05, 0.005, 0.0005):
            w = class_weight(p)
            assert np.log2(w) == round(np.log2(w))

    def test_invalid_frequency(self):
        with pytest.raises(ValueError):
            class_weight(0.0)
        with pytest.raises(ValueError):
            class_weight(1.5)


class TestClassFrequencies:
    def test_counts_and_weights(self):
        labels = np.zeros((10, 10), dtype=np.uint8)
        labels[0, :5] = 1  # 5% class 1
        stats = class_frequencies([labels], num_classes=3)
        assert stats.freq[0] == pytest.approx(0.95)
        assert stats.freq[1] == pytest.approx(0.05)
        assert stats.weights[2] == 1.0  # absent class falls back to 1

    def test_ignore_pixels_excluded(self):
        labels = np.full((4, 4), IGNORE_LABEL, dtype=np.uint8)
        labels[0, 0] = 1
        stats = class_frequencies([labels], num_classes=2)
        assert stats.freq[1] == pytest.approx(1.0)


class TestWeightedNLL:
    def _stats(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        return ClassStats(freq=np.ones_like(w) / len(w), weights=w,
                          delta=0.025, rare_classes=[], rare_freq=0.0)

    def test_manual_oracle(self):
        # 1x1 image, 2 classes, logits (0, ln 3) -> p = (0.25, 0.75)
        scores = Tensor(np.array([[[0.0]], [[np.log(3.0)]]],
                                 dtype=np.float32), requires_grad=True)
        labels = np.array([[1]], dtype=np.uint8)
        loss = weighted_nll_loss(scores, labels, self._stats([1.0, 2.0]))
        assert loss.data == pytest.approx(-2.0 * np.log(0.75), rel=1e-5)

    def test_ignore_label_contributes_nothing(self):
        scores = Tensor(np.zeros((2, 1, 2), dtype=np.float32),
                        requires_grad=True)
        labels = np.array([[0, IGNORE_LABEL]], dtype=np.uint8)
        loss = weighted_nll_loss(scores, labels, self._stats([1.0, 1.0]))
        assert loss.data == pytest.approx(np.log(2.0), rel=1e-5)
        loss.backward()
        np.testing.assert_allclose(scores.grad[:, 0, 1], 0.0)

    def test_gradient_matches_softmax_minus_onehot(self):
        scores = Tensor(np.array([[[1.0]], [[2.0]], [[0.5]]],
                                 dtype=np.float32), requires_grad=True)
        labels = np.array([[2]], dtype=np.uint8)
        loss = weighted_nll_loss(scores, labels, self._stats([1, 1, 4]))
        loss.backward()
        z = scores.data[:, 0, 0].astype(np.float64)
        p = np.exp(z - z.max())
        p /= p.sum()
        want = 4.0 * (p - np.eye(3)[2])
        np.testing.assert_allclose(scores.grad[:, 0, 0], want, rtol=1e-5)


class TestSchedules:
    def test_lr_step(self):
        assert lr_step(1e-3, 0, 15) == pytest.approx(1e-3)
        assert lr_step(1e-3, 14, 15) == pytest.approx(1e-3)
        assert lr_step(1e-3, 15, 15) == pytest.approx(1e-4)
        assert lr_step(1e-3, 40, 15) == pytest.approx(1e-4)

    def test_lr_poly(self):
        assert lr_poly(1e-3, 0, 50000, 0.9) == pytest.approx(1e-3)
        mid = lr_poly(1e-3, 25000, 50000, 0.9)
        assert mid == pytest.approx(1e-3 * 0.5 ** 0.9, rel=1e-9)
        assert lr_poly(1e-3, 50000, 50000, 0.9) == 0.0

    def test_poly_monotone(self):
        vals = [lr_poly(0.1, i, 100, 0.9) for i in range(101)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestMetrics:
    def test_spec_oracle(self):
        cm = ConfusionMatrix(2, counts=np.array([[3, 1], [0, 4]], dtype=np.int64))
        m = seg_metrics(cm)
        assert m.pixel_acc == pytest.approx(0.875)
        assert m.mean_acc == pytest.approx(0.875)
        assert m.mean_iou == pytest.approx(0.775)

    def test_mean_iou_le_mean_acc(self, rng):
        for _ in range(200):
            counts = rng.integers(0, 20, size=(4, 4))
            counts[np.arange(4), np.arange(4)] += 1  # nonempty rows
            m = seg_metrics(ConfusionMatrix(4, counts=counts.astype(np.int64)))
            assert m.mean_iou <= m.mean_acc + 1e-12

    def test_empty_class_excluded(self):
        counts = np.array([[5, 0, 0], [0, 5, 0], [0, 0, 0]], dtype=np.int64)
        m = seg_metrics(ConfusionMatrix(3, counts=counts))
        assert m.excluded == [2]
        assert m.mean_acc == pytest.approx(1.0)

    def test_update_ignores_255(self):
        cm = ConfusionMatrix(2)
        pred = np.array([[0, 1]], dtype=np.uint8)
        truth = np.array([[0, IGNORE_LABEL]], dtype=np.uint8)
        cm.update(truth, pred)
        assert cm.counts.sum() == 1

    def test_metrics_lines_round_trip(self):
        cm = ConfusionMatrix(2, counts=np.array([[3, 1], [0, 4]], dtype=np.int64))
        lines = seg_metrics(cm).as_lines()
        parsed = dict(line.split("=", 1) for line in lines)
        assert float(parsed["pixel_acc"]) == pytest.approx(0.875)
