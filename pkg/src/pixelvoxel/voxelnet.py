"""Point-cloud branch: shared-weight per-point MLP, order-invariant max
pooling, global/local concatenation and the scatter back to an
image-aligned score map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import CameraIntrinsics, PointCloud
from .layers import Linear, LinearBNReLU, Module, ModuleList


@dataclass
class VoxelNetConfig:
    pre_pool_widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    post_concat_widths: list[int] = field(default_factory=lambda: [128, 64])
    num_classes: int = 6
    concat_all_levels: bool = True  # concat every pre-pool level, not just the last

    def __post_init__(self):
        if not self.pre_pool_widths or not self.post_concat_widths:
            raise ValueError("MLP width lists must be nonempty")
        if any(w < 1 for w in self.pre_pool_widths + self.post_concat_widths):
            raise ValueError("MLP widths must be >= 1")


class VoxelNet(Module):
    def __init__(self, config: VoxelNetConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        pre = ModuleList()
        din = 6
        for w in config.pre_pool_widths:
            pre.append(LinearBNReLU(din, w, rng))
            din = w
        self.pre_mlp = pre

        global_width = config.pre_pool_widths[-1]
        local_width = sum(config.pre_pool_widths) if config.concat_all_levels \
            else config.pre_pool_widths[-1]
        post = ModuleList()
        din = global_width + local_width
        for w in config.post_concat_widths:
            post.append(LinearBNReLU(din, w, rng))
            din = w
        self.post_mlp = post
        self.score = Linear(din, config.num_classes, rng)

    def forward(self, points: Tensor, train: bool = False) -> Tensor:
        """Per-point class scores [n,c] from an [n,6] cloud tensor.

        The point count is never reduced; the global feature is the
        columnwise max of the last pre-pool level, tiled back to n rows
        and concatenated with the per-point features of every level.
        """
        if points.data.ndim != 2 or points.shape[1] != 6 or points.shape[0] < 1:
            raise ad.ShapeError(f"voxelnet: expected [n,6] cloud, got {points.shape}")
        n = points.shape[0]
        x = points
        levels = []
        for layer in self.pre_mlp:
            x = layer(x, train)
            levels.append(x)
        global_feat = ad.tile_rows(ad.reduce_max_over_points(levels[-1]), n)
        local = levels if self.config.concat_all_levels else [levels[-1]]
        x = ad.channel_concat([global_feat] + local)
        for layer in self.post_mlp:
            x = layer(x, train)
        return self.score(x)

    def global_feature(self, points: Tensor, train: bool = False) -> Tensor:
        """Order-invariant [1,d] summary: columnwise max of the last
        pre-pool level."""
        x = points
        for layer in self.pre_mlp:
            x = layer(x, train)
        return ad.reduce_max_over_points(x)

    __call__ = forward


def cloud_to_tensor(cloud: PointCloud, dtype=np.float32) -> Tensor:
    return Tensor(np.concatenate([cloud.xyz, cloud.rgb], axis=1).astype(dtype))


def project_pixels(xyz: np.ndarray, intrinsics: CameraIntrinsics):
    """Nearest-integer pinhole projection; returns (u, v, in_bounds)."""
    z = xyz[:, 2]
    if np.any(z <= 0):
        raise ValueError("project_pixels: non-positive depth")
    u = np.rint(intrinsics.fx * xyz[:, 0] / z + intrinsics.cx).astype(np.int64)
    v = np.rint(intrinsics.fy * xyz[:, 1] / z + intrinsics.cy).astype(np.int64)
    ok = (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    return u, v, ok


def reshape_backproject(scores: Tensor, cloud: PointCloud,
                        intrinsics: CameraIntrinsics, h: int, w: int
                        ) -> tuple[Tensor, np.ndarray, int]:
    """Scatter per-point scores [n,c] to a [c,h,w] map by pinhole
    projection.  Collisions keep the nearest point (smallest z); the
    returned mask marks covered pixels; out-of-bounds points are dropped
    and counted.  Backward routes each pixel's gradient to its winning
    point only.
    """
    if scores.data.ndim != 2 or scores.shape[0] != cloud.xyz.shape[0]:
        raise ad.ShapeError(
            f"reshape_backproject: scores {scores.shape} vs {cloud.xyz.shape[0]} points")
    if intrinsics.fx <= 0 or intrinsics.fy <= 0:
        raise ValueError("reshape_backproject: degenerate intrinsics")
    if (intrinsics.width, intrinsics.height) != (w, h):
        intrinsics = intrinsics.resized(w, h)
    u, v, ok = project_pixels(cloud.xyz, intrinsics)
    dropped = int((~ok).sum())
    idx = np.nonzero(ok)[0]
    pix = v[idx] * w + u[idx]
    z = cloud.xyz[idx, 2]
    # stable sort by (pixel, z): first entry of each pixel group wins
    order = np.lexsort((idx, z, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win_points = idx[order[first]]
    win_pix = pix_sorted[first]

    c = scores.shape[1]
    flat = np.zeros((h * w, c), dtype=scores.dtype)
    flat[win_pix] = scores.data[win_points]
    mask = np.zeros(h * w, dtype=np.uint8)
    mask[win_pix] = 1

    def backward(g):
        if scores.requires_grad:
            gs = np.zeros_like(scores.data)
            gflat = g.reshape(c, h * w).T
            gs[win_points] = gflat[win_pix]
            scores._accumulate(gs)

    out = ad._node(flat.T.reshape(c, h, w), (scores,), backward, "reshape_backproject")
    return out, mask.reshape(h, w), dropped
