"""RGB branch: truncated backbone, chained context stacks and skip heads.

The backbone is a small random-initialized stack of Conv+BN+ReLU stages
with 2x max pooling, mirroring a pool2..pool5 topology at desk scale.
Context stacks sit on the last stage at constant spatial size and widen
the receptive field; each context stack and each skip tap emits a
c-channel score map, bilinearly upsampled to a common fusion resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Conv2d, ConvBNReLU, Module, ModuleList


@dataclass
class LayerSpec:
    """Kernel/stride pair for receptive-field accounting."""
    kernel: int
    stride: int
    name: str = ""

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError(f"LayerSpec {self.name}: kernel/stride must be >= 1")


def receptive_field(layers: list[LayerSpec]) -> list[int]:
    """RF after each layer: RF_j = RF_{j-1} + (k_j - 1) * prod(S_0..S_{j-1}),
    with RF_0 = 1 and S_0 = 1."""
    if not layers:
        raise ValueError("receptive_field: empty layer list")
    rf, stride_prod = 1, 1
    out = []
    for spec in layers:
        rf = rf + (spec.kernel - 1) * stride_prod
        stride_prod *= spec.stride
        out.append(rf)
    return out


def vgg16_prefix_layers(through_fc6: bool = False) -> list[LayerSpec]:
    """Kernel/stride sequence of the VGG-16 prefix through pool5 (and
    optionally fc6 realized as a 7x7 convolution)."""
    layers: list[LayerSpec] = []
    for stage, nconv in enumerate([2, 2, 3, 3, 3], start=1):
        for i in range(nconv):
            layers.append(LayerSpec(3, 1, f"conv{stage}_{i + 1}"))
        layers.append(LayerSpec(2, 2, f"pool{stage}"))
    if through_fc6:
        layers.append(LayerSpec(7, 1, "fc6"))
    return layers


@dataclass
class BackboneConfig:
    """Stage descriptors: (conv count, kernel, width, pool stride)."""
    stages: list[tuple[int, int, int, int]] = field(
        default_factory=lambda: [(2, 3, 16, 2), (2, 3, 32, 2), (2, 3, 64, 2), (2, 3, 64, 2)])
    taps: list[int] = field(default_factory=lambda: [2, 3, 4])  # 1-based stage indices

    def __post_init__(self):
        for t in self.taps:
            if not 1 <= t <= len(self.stages):
                raise ValueError(f"tap {t} names a nonexistent stage")

    @property
    def total_stride(self) -> int:
        return int(np.prod([s[3] for s in self.stages]))


@dataclass
class ContextStackConfig:
    count: int = 3
    kernel: int = 5
    width: int = 64

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("context stack count must be >= 1")
        if self.kernel % 2 == 0:
            raise ValueError("context stack kernel must be odd")


@dataclass
class PixelNetConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    context: ContextStackConfig = field(default_factory=ContextStackConfig)
    skip_width: int = 32
    num_classes: int = 6
    fusion_scale: int = 4  # fusion resolution = input / fusion_scale


class PixelNet(Module):
    def __init__(self, config: PixelNetConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c = config.num_classes

        stages = ModuleList()
        cin = 3
        widths = []
        for nconv, k, width, _pool in config.backbone.stages:
            convs = ModuleList()
            for _ in range(nconv):
                convs.append(ConvBNReLU(cin, width, k, pad=k // 2, rng=rng))
                cin = width
            stages.append(convs)
            widths.append(width)
        self.stages = stages
        self._stage_widths = widths

        ctx = ModuleList()
        ctx_scores = ModuleList()
        w = widths[-1]
        for _ in range(config.context.count):
            ctx.append(ConvBNReLU(w, config.context.width, config.context.kernel,
                                  pad=config.context.kernel // 2, rng=rng))
            w = config.context.width
            ctx_scores.append(Conv2d(w, c, 1, rng=rng))
        self.context_stacks = ctx
        self.context_score_convs = ctx_scores

        skips = ModuleList()
        skip_scores = ModuleList()
        for tap in config.backbone.taps:
            skips.append(ConvBNReLU(widths[tap - 1], config.skip_width, 3, pad=1, rng=rng))
            skip_scores.append(Conv2d(config.skip_width, c, 1, rng=rng))
        self.skip_stacks = skips
        self.skip_score_convs = skip_scores

    def forward(self, rgb: Tensor, train: bool = False) -> tuple[list[Tensor], list[Tensor]]:
        """Returns (context score maps, skip score maps), every map with
        exactly num_classes channels at the common fusion resolution."""
        cfg = self.config
        _, h, w = rgb.shape
        stride = cfg.backbone.total_stride
        if h % stride or w % stride:
            need_h = (stride - h % stride) % stride
            need_w = (stride - w % stride) % stride
            raise ad.ShapeError(
                f"input {h}x{w} not divisible by backbone stride {stride}; "
                f"pad by {need_h}x{need_w}")
        fh, fw = h // cfg.fusion_scale, w // cfg.fusion_scale

        x = rgb
        tap_features = {}
        for idx, (convs, (_n, _k, _w, pool)) in enumerate(
                zip(self.stages, cfg.backbone.stages), start=1):
            for conv in convs:
                x = conv(x, train)
            x, _ = ad.maxpool2d(x, pool, pool)
            tap_features[idx] = x

        context_scores = []
        feat = x
        base_hw = feat.shape[1:]
        for stack, head in zip(self.context_stacks, self.context_score_convs):
            feat = stack(feat, train)
            assert feat.shape[1:] == base_hw, "context stack changed spatial extent"
            context_scores.append(ad.upsample_bilinear(head(feat), fh, fw))

        skip_scores = []
        for tap, stack, head in zip(cfg.backbone.taps, self.skip_stacks,
                                    self.skip_score_convs):
            s = head(stack(tap_features[tap], train))
            skip_scores.append(ad.upsample_bilinear(s, fh, fw))
        return context_scores, skip_scores

    __call__ = forward
