"""Finite-difference gradient suite covering every differentiable op
and the full joint loss on a tiny configuration.

Each entry compares reverse-mode gradients against central differences
in float64; smooth ops are held to 1e-4 relative, kinked ops (max-based
selections) and the composite loss to 1e-3.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_difference_gradcheck
from .config import PipelineConfig
from .geometry import CameraIntrinsics, PointCloud
from .losses import ClassStats, weighted_nll_loss
from .model import build_network, upsampled_final
from .voxelnet import reshape_backproject

SMOOTH_TOL = 1e-4
KINKED_TOL = 1e-3


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def run_gradient_suite(config: PipelineConfig | None = None, seed: int = 0
                       ) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(np.random.PCG64(seed))
    checks: list[tuple[str, float, float]] = []

    def check(name, f, x, tol):
        checks.append((name, finite_difference_gradcheck(f, x, 1e-5), tol))

    w = Tensor(rng.standard_normal((2, 1, 3, 3)).astype(np.float64))
    b = Tensor(rng.standard_normal(2).astype(np.float64))
    check("conv2d/input",
          lambda x: ad.sum_all(ad.hadamard(y := ad.conv2d(x, w, b, 1, 1), y)),
          _rand(rng, 1, 4, 4), SMOOTH_TOL)
    x0 = Tensor(rng.standard_normal((1, 4, 4)).astype(np.float64))
    check("conv2d/weights",
          lambda weight: ad.sum_all(ad.conv2d(x0, weight, b, 1, 1)),
          _rand(rng, 2, 1, 3, 3), SMOOTH_TOL)

    gamma = Tensor(rng.standard_normal(3).astype(np.float64))
    beta = Tensor(rng.standard_normal(3).astype(np.float64))

    # weight the squared outputs so the loss is not the (nearly constant)
    # sum of squared normalized values, whose gradient vanishes
    bn_coeff = Tensor(rng.standard_normal((3, 4, 4)).astype(np.float64))

    def bn_loss(x):
        rm = np.zeros(3)
        rv = np.ones(3)
        y = ad.batchnorm(x, gamma, beta, rm, rv, train=True)
        return ad.sum_all(ad.hadamard(bn_coeff, ad.hadamard(y, y)))

    check("batchnorm/train", bn_loss, _rand(rng, 3, 4, 4), SMOOTH_TOL)

    check("relu", lambda x: ad.sum_all(ad.hadamard(y := ad.relu(x), y)),
          Tensor(rng.standard_normal((3, 5)) + 0.1), KINKED_TOL)
    check("maxpool2d", lambda x: ad.sum_all(ad.hadamard(
        (y := ad.maxpool2d(x, 2, 2)[0]), y)), _rand(rng, 1, 4, 4), KINKED_TOL)
    check("reduce_max_over_points",
          lambda x: ad.sum_all(ad.hadamard(y := ad.reduce_max_over_points(x), y)),
          _rand(rng, 6, 4), KINKED_TOL)
    check("tile_rows", lambda x: ad.sum_all(ad.hadamard(y := ad.tile_rows(x, 5), y)),
          _rand(rng, 1, 4), SMOOTH_TOL)
    check("channel_concat",
          lambda x: ad.sum_all(ad.hadamard(
              y := ad.channel_concat([x, ad.scale(x, 2.0)]), y)),
          _rand(rng, 2, 3, 3), SMOOTH_TOL)
    check("channel_slice",
          lambda x: ad.sum_all(ad.hadamard(y := ad.channel_slice(x, [(1, 3)])[0], y)),
          _rand(rng, 4, 3, 3), SMOOTH_TOL)
    check("softmax_over_channels",
          lambda x: ad.sum_all(ad.hadamard(y := ad.softmax_over_channels(x), y)),
          _rand(rng, 4, 2, 2), SMOOTH_TOL)
    bmat = Tensor(rng.standard_normal((2, 3, 3)).astype(np.float64))
    check("hadamard", lambda x: ad.sum_all(ad.hadamard(ad.hadamard(x, bmat), x)),
          _rand(rng, 2, 3, 3), SMOOTH_TOL)
    check("upsample_bilinear",
          lambda x: ad.sum_all(ad.hadamard(y := ad.upsample_bilinear(x, 5, 7), y)),
          _rand(rng, 2, 3, 3), SMOOTH_TOL)
    wl = Tensor(rng.standard_normal((4, 3)).astype(np.float64))
    bl = Tensor(rng.standard_normal(3).astype(np.float64))
    check("linear", lambda x: ad.sum_all(ad.hadamard(y := ad.linear(x, wl, bl), y)),
          _rand(rng, 5, 4), SMOOTH_TOL)

    cloud = PointCloud(np.column_stack([rng.uniform(-0.5, 0.5, 8),
                                        rng.uniform(-0.5, 0.5, 8),
                                        rng.uniform(1.0, 2.0, 8)]),
                       np.full((8, 3), 0.5))
    intr = CameraIntrinsics(4.0, 4.0, 1.5, 1.5, 4, 4)
    check("reshape_backproject",
          lambda s: ad.sum_all(ad.hadamard(
              y := reshape_backproject(s, cloud, intr, 4, 4)[0], y)),
          _rand(rng, 8, 3), KINKED_TOL)

    stats = ClassStats(np.array([0.7, 0.3]), np.array([1.0, 2.0]), 0.025, [], 0.0)
    labels = rng.integers(0, 2, size=(3, 3))
    check("weighted_nll_loss",
          lambda s: weighted_nll_loss(s, labels, stats), _rand(rng, 2, 3, 3),
          SMOOTH_TOL)

    checks.append(("joint_loss", full_loss_gradcheck(seed), KINKED_TOL))
    return checks


def _tiny_config() -> PipelineConfig:
    return PipelineConfig(num_classes=2, input_size=16, points=64,
                          backbone_widths=[4, 4], backbone_convs=1,
                          context_stacks=2, context_width=8, skip_width=4,
                          voxel_pre_widths=[8, 8], voxel_post_widths=[8],
                          fusion_scale=2, holdout_every=0)


def full_loss_gradcheck(seed: int = 0, eps: float = 1e-5) -> float:
    """Gradient of the full two-branch fused loss w.r.t. the RGB input on
    a tiny 2-class configuration."""
    config = _tiny_config()
    rng = np.random.default_rng(np.random.PCG64(seed + 1))
    net = build_network(config).astype(np.float64)
    # nonzero fusion weights so all three stacks shape the gradient
    for stack in (net.stack_a, net.stack_b, net.stack_c):
        p = stack.conv.weight
        p.tensor.data = rng.standard_normal(p.tensor.data.shape) * 0.2

    size = config.input_size
    n = config.points
    cloud = PointCloud(np.column_stack([rng.uniform(-0.5, 0.5, n),
                                        rng.uniform(-0.5, 0.5, n),
                                        rng.uniform(1.0, 2.5, n)]),
                       rng.uniform(0, 1, (n, 3)))
    intr = CameraIntrinsics(0.8 * size, 0.8 * size, (size - 1) / 2,
                            (size - 1) / 2, size, size)
    labels = rng.integers(0, config.num_classes, size=(size, size))
    stats = ClassStats.uniform(config.num_classes)

    def f(rgb):
        out = net(rgb, cloud, intr, train=True)
        return weighted_nll_loss(upsampled_final(out, size), labels, stats)

    rgb = Tensor(rng.uniform(0, 1, (3, size, size)))
    return finite_difference_gradcheck(f, rgb, eps)
