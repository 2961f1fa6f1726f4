"""Line-oriented key=value pipeline configuration.

Unknown keys are errors; values are typed from the dataclass field
annotations.  Lists are comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

# fixed, high-contrast colors; index = class id
_PALETTE = [
    (110, 80, 50),    # floor
    (180, 180, 180),  # wall
    (230, 230, 200),  # ceiling
    (200, 40, 40),
    (40, 160, 60),
    (50, 80, 200),
    (220, 180, 40),
    (150, 60, 170),
]


def palette(num_classes: int) -> np.ndarray:
    if num_classes > len(_PALETTE):
        raise ValueError(f"palette supports up to {len(_PALETTE)} classes")
    return np.array(_PALETTE[:num_classes], dtype=np.uint8)


@dataclass
class PipelineConfig:
    num_classes: int = 6
    input_size: int = 128
    points: int = 1024

    # optimization (momentum/decay/batch per the training schedule)
    batch_size: int = 10
    momentum: float = 0.9
    weight_decay: float = 0.0005
    base_lr: float = 0.001   # schedule-op default; stages use the fields below
    pixel_lr: float = 0.3    # desk-scale: zero-init fusion attenuates gradients
    voxel_lr: float = 0.02
    joint_lr: float = 0.05
    lr_step_epochs: int = 15
    poly_power: float = 0.9
    pixel_epochs: int = 60
    voxel_epochs: int = 30
    joint_epochs: int = 6      # per fine-tuning pass
    delta: float = 0.025
    seed: int = 0

    # architecture
    backbone_widths: list[int] = field(default_factory=lambda: [16, 32, 64, 64])
    backbone_convs: int = 2
    backbone_kernel: int = 3
    context_stacks: int = 3
    context_kernel: int = 5
    context_width: int = 64
    skip_width: int = 32
    fusion_scale: int = 4
    voxel_pre_widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    voxel_post_widths: list[int] = field(default_factory=lambda: [128, 64])
    use_voxelnet: bool = True
    concat_all_levels: bool = True

    # preprocessing / augmentation
    flip_prob: float = 0.5
    scale_jitter: bool = True
    depth_min: float = 0.3
    depth_max: float = 8.0
    edge_preserving_resize: bool = False

    # mapping / evaluation
    keyframe_stride: int = 5
    voxel_size: float = 0.05
    pose_tolerance: float = 0.02
    holdout_every: int = 5      # every k-th frame held out; 0 disables

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_size % (2 ** len(self.backbone_widths)):
            raise ValueError("input_size must be divisible by the backbone stride")


def _parse_value(text: str, ftype) -> object:
    text = text.strip()
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    if ftype is bool:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"bad boolean {text!r}")
    if ftype == list[int] or ftype == "list[int]":
        return [int(p) for p in text.split(",") if p.strip()]
    raise ValueError(f"unsupported config field type {ftype}")


def load_config(path: str) -> PipelineConfig:
    known = {f.name: f.type for f in fields(PipelineConfig)}
    values: dict[str, object] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_value(raw, _resolve_type(key))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return PipelineConfig(**values)


def _resolve_type(name: str):
    for f in fields(PipelineConfig):
        if f.name == name:
            t = f.type
            if isinstance(t, str):
                return {"int": int, "float": float, "bool": bool,
                        "list[int]": list[int]}[t]
            return t
    raise KeyError(name)


def save_config(config: PipelineConfig, path: str) -> None:
    with open(path, "w") as fh:
        for f in fields(PipelineConfig):
            v = getattr(config, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            fh.write(f"{f.name} = {v}\n")
