"""Softmax-weighted fusion of score maps.

A fusion stack concatenates n score maps of c channels each, applies a
1x1 convolution over the n*c channels, softmax-normalizes all n*c
channels per location into confidence weights, slices the weights back
into n groups and blends: F_sum = sum_j maps_j (*) W_j.  Weights start
at zero so the stack begins as exact equal-weight fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Conv2d, Module


class FusionStack(Module):
    def __init__(self, n_models: int, num_classes: int, rng: np.random.Generator | None = None):
        super().__init__()
        if n_models < 2:
            raise ValueError("fusion stack needs at least 2 input models")
        self.n_models = n_models
        self.num_classes = num_classes
        self.conv = Conv2d(n_models * num_classes, n_models * num_classes, 1,
                           rng=rng, zero_init=True)

    def forward(self, maps: list[Tensor], ) -> tuple[Tensor, list[Tensor]]:
        n, c = self.n_models, self.num_classes
        if len(maps) != n:
            raise ad.ShapeError(f"fusion: got {len(maps)} maps, expected {n}")
        ref = maps[0].shape
        for m in maps:
            if m.data.ndim != 3 or m.shape[0] != c or m.shape != ref:
                raise ad.ShapeError(f"fusion: map shape {m.shape}, expected ({c},{ref[1]},{ref[2]})")
        fused = self.conv(ad.channel_concat(maps))
        weights = ad.channel_slice(ad.softmax_over_channels(fused),
                                   [(j * c, (j + 1) * c) for j in range(n)])
        blended = ad.hadamard(maps[0], weights[0])
        for m, w in zip(maps[1:], weights[1:]):
            blended = ad.add(blended, ad.hadamard(m, w))
        return blended, weights

    __call__ = forward


def softmax_weighted_fusion(stack: FusionStack, maps: list[Tensor]
                            ) -> tuple[Tensor, list[Tensor]]:
    return stack(maps)


@dataclass(frozen=True)
class FusionPlan:
    """Evaluation order of the three fusion stages.

    Stage A blends the context-stack score maps, stage B blends A's
    output with the skip score maps, stage C blends B's output with the
    point-branch score map (absent in the image-only ablation).
    """
    n_context: int
    n_skips: int
    use_voxel: bool

    @property
    def stack_sizes(self) -> list[int]:
        sizes = [self.n_context, 1 + self.n_skips]
        if self.use_voxel:
            sizes.append(2)
        return sizes


def build_fusion_topology(n_context: int, n_skips: int, use_voxel: bool = True) -> FusionPlan:
    plan = FusionPlan(n_context, n_skips, use_voxel)
    for size in plan.stack_sizes:
        if size < 2:
            raise ValueError(f"fusion plan has a degenerate single-input stack (n={size})")
    return plan
