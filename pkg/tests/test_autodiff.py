"""Unit tests for the minimal reverse-mode autodiff engine."""

import numpy as np
import pytest

from pixelvoxel import autodiff as ad
from pixelvoxel.autodiff import (
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    finite_difference_gradcheck,
)


def _t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class TestGradients:
    """Finite-difference checks for individual ops (float64 inputs)."""

    def test_relu_away_from_kink(self, rng):
        x = rng.normal(size=(4, 5))
        x[np.abs(x) < 0.1] += 0.2  # keep clear of the kink
        err = finite_difference_gradcheck(
            lambda t: ad.sum_all(ad.relu(t)), _t64(x))
        assert err < 1e-4

    def test_conv2d_input(self, rng):
        w = _t64(rng.normal(size=(3, 2, 3, 3)) * 0.3)
        b = _t64(rng.normal(size=(3,)))
        coeff = Tensor(rng.normal(size=(3, 6, 6)))
        err = finite_difference_gradcheck(
            lambda t: ad.sum_all(ad.hadamard(
                ad.conv2d(t, w, b, stride=1, pad=1), coeff)),
            _t64(rng.normal(size=(2, 6, 6))))
        assert err < 1e-4

    def test_conv2d_weight_and_bias(self, rng):
        x = Tensor(rng.normal(size=(2, 5, 5)))
        coeff = Tensor(rng.normal(size=(3, 5, 5)))
        w0 = rng.normal(size=(3, 2, 3, 3)) * 0.3
        b0 = rng.normal(size=(3,))
        err_w = finite_difference_gradcheck(
            lambda t: ad.sum_all(ad.hadamard(
                ad.conv2d(x, t, _t64(b0), stride=1, pad=1), coeff)),
            _t64(w0))
        err_b = finite_difference_gradcheck(
            lambda t: ad.sum_all(ad.hadamard(
                ad.conv2d(x, _t64(w0), t, stride=1, pad=1), coeff)),
            _t64(b0))
        assert err_w < 1e-4
        assert err_b < 1e-4

    def test_batchnorm_train_mode(self, rng):
        gamma = _t64(1.0 + 0.1 * rng.normal(size=(3,)))
        beta = _t64(rng.normal(size=(3,)))
        coeff = Tensor(rng.normal(size=(3, 4, 4)))

        def f(t):
            mean = np.zeros(3)
            var = np.ones(3)
            out = ad.batchnorm(t, gamma, beta, mean, var, train=True)
            return ad.sum_all(ad.hadamard(ad.hadamard(out, out), coeff))

        err = finite_difference_gradcheck(f, _t64(rng.normal(size=(3, 4, 4))))
        assert err < 1e-4

    def test_softmax_over_channels(self, rng):
        coeff = Tensor(rng.normal(size=(4, 3, 3)))
        err = finite_difference_gradcheck(
            lambda t: ad.sum_all(ad.hadamard(
                ad.softmax_over_channels(t), coeff)),
            _t64(rng.normal(size=(4, 3, 3))))
        assert err < 1e-4

    def test_upsample_bilinear(self, rng):
        coeff = Tensor(rng.normal(size=(2, 7, 7)))
        err = finite_difference_gradcheck(
            lambda t: ad.sum_all(ad.hadamard(
                ad.upsample_bilinear(t, 7, 7), coeff)),
            _t64(rng.normal(size=(2, 4, 4))))
        assert err < 1e-4

    def test_linear_and_tile_and_reduce(self, rng):
        w = _t64(rng.normal(size=(5, 4)) * 0.3)
        b = _t64(rng.normal(size=(4,)))
        coeff = Tensor(rng.normal(size=(6, 4)))

        def f(t):
            h = ad.linear(t, w, b)
            g = ad.tile_rows(ad.reduce_max_over_points(h), 6)
            return ad.sum_all(ad.hadamard(g, coeff))

        err = finite_difference_gradcheck(f, _t64(rng.normal(size=(6, 5))))
        assert err < 1e-3  # max-reduction introduces kinks

    def test_maxpool(self, rng):
        coeff = Tensor(rng.normal(size=(2, 3, 3)))

        def f(t):
            out, _ = ad.maxpool2d(t, 2, 2)
            return ad.sum_all(ad.hadamard(out, coeff))

        err = finite_difference_gradcheck(f, _t64(rng.normal(size=(2, 6, 6))))
        assert err < 1e-3

    def test_concat_slice_round_trip(self, rng):
        coeff = Tensor(rng.normal(size=(3, 2, 2)))

        def f(t):
            cat = ad.channel_concat([t, ad.scale(t, 2.0)])
            first, second = ad.channel_slice(cat, [(0, 3), (3, 6)])
            return ad.sum_all(ad.hadamard(ad.add(first, second), coeff))

        err = finite_difference_gradcheck(f, _t64(rng.normal(size=(3, 2, 2))))
        assert err < 1e-4


class TestMaxpoolTies:
    def test_tie_goes_to_first_flat_index(self):
        x = Tensor(np.full((1, 2, 2), 5.0), requires_grad=True)
        out, _ = ad.maxpool2d(x, 2, 2)
        ad.sum_all(out).backward()
        expected = np.zeros((1, 2, 2))
        expected[0, 0, 0] = 1.0
        np.testing.assert_array_equal(x.grad, expected)


class TestBatchNormSemantics:
    def test_eval_mode_uses_running_stats(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 4)).astype(np.float32))
        gamma = Tensor(np.ones(3, dtype=np.float32))
        beta = Tensor(np.zeros(3, dtype=np.float32))
        mean = np.array([1.0, -1.0, 0.5], dtype=np.float32)
        var = np.array([4.0, 1.0, 0.25], dtype=np.float32)
        out = ad.batchnorm(x, gamma, beta, mean.copy(), var.copy(),
                           train=False)
        want = (x.data - mean[:, None, None]) / np.sqrt(
            var[:, None, None] + 1e-5)
        np.testing.assert_allclose(out.data, want, atol=1e-6)

    def test_train_mode_updates_running_stats(self, rng):
        x = Tensor(rng.normal(size=(2, 8, 8)).astype(np.float32))
        gamma = Tensor(np.ones(2, dtype=np.float32))
        beta = Tensor(np.zeros(2, dtype=np.float32))
        mean = np.zeros(2, dtype=np.float32)
        var = np.ones(2, dtype=np.float32)
        ad.batchnorm(x, gamma, beta, mean, var, train=True)
        batch_mean = x.data.mean(axis=(1, 2))
        np.testing.assert_allclose(mean, 0.1 * batch_mean, atol=1e-5)

    def test_2d_normalizes_per_feature(self, rng):
        x = Tensor(rng.normal(size=(16, 3)).astype(np.float32))
        gamma = Tensor(np.ones(3, dtype=np.float32))
        beta = Tensor(np.zeros(3, dtype=np.float32))
        out = ad.batchnorm(x, gamma, beta, np.zeros(3, np.float32),
                           np.ones(3, np.float32), train=True)
        np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-5)


class TestOptimizer:
    def test_momentum_step_oracle(self):
        p = Parameter(np.array([1.0, 2.0], dtype=np.float32))
        p.tensor.grad = np.array([0.5, -0.5], dtype=np.float32)
        ad.sgd_momentum_step([p], lr=0.1, momentum=0.9, weight_decay=0.0)
        # v = 0.9*0 + 0.5 ; theta = theta - 0.1*v
        np.testing.assert_allclose(p.data, [0.95, 2.05], atol=1e-6)
        p.tensor.grad = np.array([0.5, -0.5], dtype=np.float32)
        ad.sgd_momentum_step([p], lr=0.1, momentum=0.9, weight_decay=0.0)
        # v = 0.9*0.5 + 0.5 = 0.95
        np.testing.assert_allclose(p.data, [0.855, 2.145], atol=1e-6)

    def test_weight_decay_added_to_gradient(self):
        p = Parameter(np.array([2.0], dtype=np.float32))
        p.tensor.grad = np.zeros(1, dtype=np.float32)
        ad.sgd_momentum_step([p], lr=1.0, momentum=0.0, weight_decay=0.1)
        np.testing.assert_allclose(p.data, [1.8], atol=1e-6)

    def test_lr_mult_scales_update(self):
        p = Parameter(np.array([0.0], dtype=np.float32), lr_mult=10.0)
        p.tensor.grad = np.array([1.0], dtype=np.float32)
        ad.sgd_momentum_step([p], lr=0.1, momentum=0.0)
        np.testing.assert_allclose(p.data, [-1.0], atol=1e-6)

    def test_grad_cleared_after_step(self):
        p = Parameter(np.array([1.0], dtype=np.float32))
        p.tensor.grad = np.array([1.0], dtype=np.float32)
        ad.sgd_momentum_step([p], lr=0.1)
        assert p.tensor.grad is None


class TestErrors:
    def test_shape_mismatch_raises(self, rng):
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.normal(size=(3, 2)))
        with pytest.raises(ShapeError):
            ad.add(a, b)

    def test_nonfinite_raises_with_op_name(self):
        x = Tensor(np.array([[np.inf, 1.0]]))
        with pytest.raises(NonFiniteError):
            ad.relu(x)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        arrays = {
            "conv.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
            "bn.running_mean": rng.normal(size=(4,)).astype(np.float32),
            "fc.bias": rng.normal(size=(7,)).astype(np.float32),
        }
        path = str(tmp_path / "net.ckpt")
        ad.save_checkpoint(path, arrays)
        loaded = ad.load_checkpoint(path)
        assert sorted(loaded) == sorted(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
            assert loaded[name].dtype == np.float32

    def test_magic_header(self, tmp_path):
        path = str(tmp_path / "net.ckpt")
        ad.save_checkpoint(path, {"w": np.ones(2, dtype=np.float32)})
        with open(path, "rb") as fh:
            assert fh.read(6) == b"PVNET1"

    def test_deterministic_bytes(self, tmp_path):
        arrays = {"b": np.ones(3, dtype=np.float32),
                  "a": np.zeros(2, dtype=np.float32)}
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        ad.save_checkpoint(p1, arrays)
        ad.save_checkpoint(p2, dict(reversed(list(arrays.items()))))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "junk.ckpt")
        with open(path, "wb") as fh:
            fh.write(b"NOTPVN" + b"\x00" * 16)
        with pytest.raises(ValueError):
            ad.load_checkpoint(path)
