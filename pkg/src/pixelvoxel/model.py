"""Assembly of the full two-branch network with its fusion stages."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import PipelineConfig
from .fusion import FusionStack, build_fusion_topology
from .geometry import CameraIntrinsics, PointCloud
from .layers import Module
from .pixelnet import BackboneConfig, ContextStackConfig, PixelNet, PixelNetConfig
from .voxelnet import VoxelNet, VoxelNetConfig, cloud_to_tensor, reshape_backproject


class PixelVoxelNet(Module):
    """Image branch, optional point branch, and the three-stage
    softmax-weighted fusion (context stacks -> skips -> point branch)."""

    def __init__(self, config: PipelineConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        pcfg = PixelNetConfig(
            backbone=BackboneConfig(
                stages=[(config.backbone_convs, config.backbone_kernel, w, 2)
                        for w in config.backbone_widths],
                taps=list(range(2, len(config.backbone_widths) + 1)) or [1]),
            context=ContextStackConfig(config.context_stacks, config.context_kernel,
                                       config.context_width),
            skip_width=config.skip_width,
            num_classes=config.num_classes,
            fusion_scale=config.fusion_scale)
        self.plan = build_fusion_topology(config.context_stacks,
                                          len(pcfg.backbone.taps),
                                          config.use_voxelnet)
        self.pixelnet = PixelNet(pcfg, rng)
        self.stack_a = FusionStack(self.plan.stack_sizes[0], config.num_classes)
        self.stack_b = FusionStack(self.plan.stack_sizes[1], config.num_classes)
        if config.use_voxelnet:
            self.voxelnet = VoxelNet(
                VoxelNetConfig(list(config.voxel_pre_widths),
                               list(config.voxel_post_widths),
                               config.num_classes, config.concat_all_levels), rng)
            self.stack_c = FusionStack(2, config.num_classes)

    def forward(self, rgb: Tensor, cloud: PointCloud | None,
                intrinsics: CameraIntrinsics | None, train: bool = False) -> dict:
        """Returns the fused score map at fusion resolution plus the
        intermediate products (point scores, coverage mask)."""
        ctx_scores, skip_scores = self.pixelnet(rgb, train)
        a_out, _ = self.stack_a(ctx_scores)
        b_out, _ = self.stack_b([a_out] + skip_scores)
        out = {"pixel": b_out, "final": b_out, "coverage": None, "point_scores": None}
        if self.config.use_voxelnet and cloud is not None:
            fh, fw = b_out.shape[1], b_out.shape[2]
            pts = self.voxelnet(cloud_to_tensor(cloud, rgb.dtype), train)
            vox_map, mask, dropped = reshape_backproject(
                pts, cloud, intrinsics.resized(fw, fh), fh, fw)
            c_out, _ = self.stack_c([b_out, vox_map])
            out.update(final=c_out, voxel=vox_map, coverage=mask,
                       point_scores=pts, dropped_points=dropped)
        return out

    __call__ = forward

    def stage_parameters(self, stage: str, joint_pass: int = 0):
        """Trainable parameter subsets for the three-stage schedule."""
        if stage == "pixel":
            return self.pixelnet.parameters()
        if stage == "voxel":
            if not self.config.use_voxelnet:
                raise ValueError("voxel stage requires use_voxelnet")
            return self.voxelnet.parameters()
        if stage == "joint":
            params = self.pixelnet.parameters()
            if self.config.use_voxelnet:
                params += self.voxelnet.parameters()
            stacks = [self.stack_a, self.stack_b]
            if self.config.use_voxelnet:
                stacks.append(self.stack_c)
            if not 1 <= joint_pass <= len(stacks):
                raise ValueError(f"joint pass {joint_pass} out of range")
            for s in stacks[:joint_pass]:
                params += s.parameters()
            return params
        raise ValueError(f"unknown stage {stage!r}")


def upsampled_final(out: dict, size: int) -> Tensor:
    return ad.upsample_bilinear(out["final"], size, size)


def build_network(config: PipelineConfig, seed: int | None = None) -> PixelVoxelNet:
    rng = np.random.default_rng(np.random.PCG64(config.seed if seed is None else seed))
    return PixelVoxelNet(config, rng)
