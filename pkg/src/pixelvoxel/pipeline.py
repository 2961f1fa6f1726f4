"""Orchestration: dataset access, preprocessing/augmentation, the
three-stage training schedule, keyframe mapping runs and evaluation."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import cv2
import numpy as np

from . import autodiff as ad
from . import synth
from .autodiff import Tensor
from .config import PipelineConfig, palette
from .geometry import (CameraIntrinsics, PointCloud, associate_pose,
                       backproject_depth, load_intrinsics, load_trajectory,
                       uniform_downsample)
from .losses import (ClassStats, ConfusionMatrix, class_frequencies, lr_poly,
                     lr_step, seg_metrics, weighted_nll_loss)
from .mapping import VoxelMap, export_ply, integrate_labeled_cloud, voxel_accuracy
from .model import PixelVoxelNet, build_network, upsampled_final


@dataclass
class FrameRecord:
    rgb_path: str
    depth_path: str
    label_path: str | None
    timestamp: float


@dataclass
class Frame:
    """One preprocessed frame at network resolution."""
    rgb: np.ndarray                 # [h,w,3] in [0,1]
    labels: np.ndarray | None       # [h,w] int
    cloud: PointCloud               # downsampled, pixels at network scale
    point_labels: np.ndarray | None
    timestamp: float


def load_records(data_dir: str) -> tuple[list[FrameRecord], CameraIntrinsics]:
    intr = load_intrinsics(os.path.join(data_dir, "intrinsics.txt"))
    records = []
    frames_file = os.path.join(data_dir, "frames.txt")
    with open(frames_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise ValueError(f"{frames_file}:{lineno}: expected 3-4 fields")
            ts = float(parts[0])
            label = os.path.join(data_dir, parts[3]) if len(parts) == 4 else None
            records.append(FrameRecord(os.path.join(data_dir, parts[1]),
                                       os.path.join(data_dir, parts[2]),
                                       label, ts))
    if not records:
        raise ValueError(f"{frames_file}: no frames")
    return records, intr


def preprocess_frame(record: FrameRecord, config: PipelineConfig,
                     intrinsics: CameraIntrinsics) -> Frame:
    """Resize to network resolution and build the downsampled cloud.

    Augmentation is applied separately (``augment_frame``) so the base
    frame can be cached across epochs.
    """
    size = config.input_size
    rgb = synth.read_rgb(record.rgb_path)
    if rgb.shape[:2] != (size, size):
        interp = cv2.INTER_LINEAR
        rgb = cv2.resize(rgb, (size, size), interpolation=interp)
    if config.edge_preserving_resize:
        rgb = cv2.bilateralFilter(rgb.astype(np.float32), 5, 0.1, 3).astype(np.float64)
    depth = synth.read_depth_m(record.depth_path)
    if depth.shape != (size, size):
        depth = cv2.resize(depth, (size, size), interpolation=cv2.INTER_NEAREST)
    labels = None
    if record.label_path is not None:
        labels = synth.read_labels(record.label_path)
        if labels.shape != (size, size):
            labels = cv2.resize(labels.astype(np.uint8), (size, size),
                                interpolation=cv2.INTER_NEAREST).astype(np.int64)
    intr = intrinsics.resized(size, size)
    cloud, _invalid = backproject_depth(depth, rgb, intr,
                                        config.depth_min, config.depth_max)
    cloud = uniform_downsample(cloud, config.points)
    point_labels = None
    if labels is not None:
        point_labels = labels[cloud.pixels[:, 1], cloud.pixels[:, 0]].copy()
    return Frame(rgb, labels, cloud, point_labels, record.timestamp)


def flip_frame(frame: Frame, size: int) -> Frame:
    """Joint horizontal flip of image, labels and cloud (x negated).

    Requires a centered principal point (cx = (w-1)/2) so that mirrored
    points project to mirrored pixels; the synthetic camera satisfies it.
    """
    xyz = frame.cloud.xyz.copy()
    xyz[:, 0] = -xyz[:, 0]
    pixels = frame.cloud.pixels.copy()
    pixels[:, 0] = size - 1 - pixels[:, 0]
    return Frame(frame.rgb[:, ::-1].copy(),
                 None if frame.labels is None else frame.labels[:, ::-1].copy(),
                 PointCloud(xyz, frame.cloud.rgb.copy(), pixels),
                 None if frame.point_labels is None else frame.point_labels.copy(),
                 frame.timestamp)


def jitter_frame(frame: Frame, scale: float) -> Frame:
    """Spatial scale jitter of rgb and labels about the image center.

    Applied to image-only training; the cloud is left untouched, so
    stages that pair image and cloud skip the jitter.
    """
    h, w = frame.rgb.shape[:2]
    sh, sw = max(8, round(h * scale)), max(8, round(w * scale))
    rgb = cv2.resize(frame.rgb, (sw, sh), interpolation=cv2.INTER_LINEAR)
    labels = None
    if frame.labels is not None:
        labels = cv2.resize(frame.labels.astype(np.uint8), (sw, sh),
                            interpolation=cv2.INTER_NEAREST).astype(np.int64)
    if scale >= 1.0:
        y0, x0 = (sh - h) // 2, (sw - w) // 2
        rgb = rgb[y0:y0 + h, x0:x0 + w]
        labels = None if labels is None else labels[y0:y0 + h, x0:x0 + w]
    else:
        py, px = (h - sh) // 2, (w - sw) // 2
        rgb = np.pad(rgb, ((py, h - sh - py), (px, w - sw - px), (0, 0)), mode="edge")
        if labels is not None:
            labels = np.pad(labels, ((py, h - sh - py), (px, w - sw - px)), mode="edge")
    return Frame(rgb, labels, frame.cloud, frame.point_labels, frame.timestamp)


def augment_frame(frame: Frame, config: PipelineConfig,
                  rng: np.random.Generator, jitter: bool) -> Frame:
    if rng.uniform() < config.flip_prob:
        frame = flip_frame(frame, config.input_size)
    if jitter and config.scale_jitter:
        frame = jitter_frame(frame, rng.uniform(0.95, 1.05))
    return frame


def rgb_tensor(frame: Frame) -> Tensor:
    return Tensor(frame.rgb.transpose(2, 0, 1).astype(np.float32))


def split_records(records: list[FrameRecord], holdout_every: int
                  ) -> tuple[list[FrameRecord], list[FrameRecord]]:
    """(train, holdout); every k-th frame is held out, k=0 disables."""
    if holdout_every <= 0:
        return records, []
    train = [r for i, r in enumerate(records) if (i + 1) % holdout_every]
    held = [r for i, r in enumerate(records) if not (i + 1) % holdout_every]
    return train, held


@dataclass
class TrainResult:
    checkpoint_path: str
    loss_curves: list[list[float]]
    diverged: bool = False


def _stage_loss(net: PixelVoxelNet, frame: Frame, stage: str,
                intr: CameraIntrinsics, stats: ClassStats,
                config: PipelineConfig) -> Tensor:
    if stage == "voxel":
        pts = net.voxelnet(Tensor(np.concatenate(
            [frame.cloud.xyz, frame.cloud.rgb], axis=1).astype(np.float32)), True)
        return weighted_nll_loss(ad.transpose2d(pts), frame.point_labels, stats)
    cloud = frame.cloud if stage == "joint" and config.use_voxelnet else None
    out = net(rgb_tensor(frame), cloud, intr, train=True)
    scores = upsampled_final(out, config.input_size)
    return weighted_nll_loss(scores, frame.labels, stats)


def _save_stage_checkpoint(net: PixelVoxelNet, stage: str, path: str) -> None:
    state = net.state_dict()
    if stage == "pixel":
        keep = ("pixelnet.", "stack_a.", "stack_b.")
        state = {k: v for k, v in state.items() if k.startswith(keep)}
    elif stage == "voxel":
        state = {k: v for k, v in state.items() if k.startswith("voxelnet.")}
    ad.save_checkpoint(path, state)


def _load_subset(net: PixelVoxelNet, path: str, prefixes: tuple[str, ...]) -> None:
    state = ad.load_checkpoint(path)
    own = net.state_dict()
    wanted = {k for k in own if k.startswith(prefixes)}
    missing = wanted - set(state)
    if missing:
        raise KeyError(f"{path}: missing {sorted(missing)[:3]}...")
    full = {k: (state[k] if k in wanted else own[k]) for k in own}
    net.load_state_dict(full)


def train_stage(stage: str, config: PipelineConfig, data_dir: str, out_path: str,
                pixel_ckpt: str | None = None, voxel_ckpt: str | None = None,
                log=lambda msg: None) -> TrainResult:
    """Run one training stage and write its checkpoint.

    pixel: image branch with the step LR policy; voxel: point branch
    with the poly policy; joint: loads both prior checkpoints and
    fine-tunes three times, unfreezing one fusion stage per pass (new
    fusion parameters at 10x LR).
    """
    if stage not in ("pixel", "voxel", "joint"):
        raise ValueError(f"unknown stage {stage!r}")
    if stage == "joint":
        if not (pixel_ckpt and os.path.exists(pixel_ckpt)):
            raise FileNotFoundError("joint stage requires a pixel checkpoint")
        if config.use_voxelnet and not (voxel_ckpt and os.path.exists(voxel_ckpt)):
            raise FileNotFoundError("joint stage requires a voxel checkpoint")

    records, intr = load_records(data_dir)
    train_records, _ = split_records(records, config.holdout_every)
    if not train_records:
        raise ValueError("no training frames after holdout split")
    intr_net = intr.resized(config.input_size, config.input_size)
    frames = [preprocess_frame(r, config, intr) for r in train_records]
    if any(f.labels is None for f in frames):
        raise ValueError("training requires labeled frames")
    stats = class_frequencies([f.labels for f in frames], config.num_classes,
                              config.delta)

    net = build_network(config)
    if stage == "joint":
        _load_subset(net, pixel_ckpt, ("pixelnet.", "stack_a.", "stack_b."))
        if config.use_voxelnet:
            _load_subset(net, voxel_ckpt, ("voxelnet.",))

    aug_rng = np.random.default_rng(np.random.PCG64(config.seed + 0x5EED))
    passes = 3 if stage == "joint" and config.use_voxelnet else \
        2 if stage == "joint" else 1
    epochs = {"pixel": config.pixel_epochs, "voxel": config.voxel_epochs,
              "joint": config.joint_epochs}[stage]
    n_batches = (len(frames) + config.batch_size - 1) // config.batch_size
    curves: list[list[float]] = []
    diverged = False

    for pass_idx in range(1, passes + 1):
        if stage == "joint":
            params = net.stage_parameters("joint", joint_pass=pass_idx)
            stacks = [net.stack_a, net.stack_b] + \
                ([net.stack_c] if config.use_voxelnet else [])
            for s in stacks[:pass_idx]:
                for p in s.parameters():
                    p.lr_mult = 10.0
        else:
            params = net.stage_parameters(stage)
        curve: list[float] = []
        max_iter = max(1, epochs * n_batches)
        iteration = 0
        last_good = {k: v.copy() for k, v in net.state_dict().items()}
        for epoch in range(epochs):
            order = aug_rng.permutation(len(frames))
            epoch_loss = 0.0
            count = 0
            try:
                for start in range(0, len(order), config.batch_size):
                    batch = order[start:start + config.batch_size]
                    if stage == "pixel":
                        lr = lr_step(config.pixel_lr, epoch, config.lr_step_epochs)
                    else:
                        base = config.voxel_lr if stage == "voxel" else config.joint_lr
                        lr = lr_poly(base, iteration, max_iter, config.poly_power)
                    net.zero_grad()
                    for fi in batch:
                        frame = augment_frame(frames[fi], config, aug_rng,
                                              jitter=(stage == "pixel"))
                        loss = _stage_loss(net, frame, stage, intr_net, stats, config)
                        ad.scale(loss, 1.0 / len(batch)).backward()
                        epoch_loss += loss.item()
                        count += 1
                    if not np.isfinite(epoch_loss):
                        raise ad.NonFiniteError("training loss diverged")
                    ad.sgd_momentum_step(params, lr, config.momentum,
                                         config.weight_decay)
                    iteration += 1
            except ad.NonFiniteError:
                log(f"{stage} pass {pass_idx}: divergence, restoring last good state")
                net.load_state_dict(last_good)
                diverged = True
                break
            curve.append(epoch_loss / max(count, 1))
            last_good = {k: v.copy() for k, v in net.state_dict().items()}
            log(f"{stage} pass {pass_idx} epoch {epoch}: loss {curve[-1]:.4f} lr {lr:.2e}")
        curves.append(curve)
        if diverged:
            break

    _save_stage_checkpoint(net, stage, out_path)
    return TrainResult(out_path, curves, diverged)


def load_for_inference(config: PipelineConfig, ckpt_path: str) -> PixelVoxelNet:
    net = build_network(config)
    net.load_state_dict(ad.load_checkpoint(ckpt_path))
    return net


def predict_frame(net: PixelVoxelNet, frame: Frame, intr_net: CameraIntrinsics,
                  config: PipelineConfig) -> dict:
    cloud = frame.cloud if config.use_voxelnet else None
    out = net(rgb_tensor(frame), cloud, intr_net, train=False)
    scores = upsampled_final(out, config.input_size)
    out["prediction"] = scores.data.argmax(axis=0)
    out["scores_full"] = scores
    return out


def evaluate(ckpt_path: str, data_dir: str, config: PipelineConfig,
             holdout_only: bool = True) -> tuple:
    """Confusion-matrix metrics over labeled frames (2D predictions)."""
    records, intr = load_records(data_dir)
    _, held = split_records(records, config.holdout_every)
    subset = held if (holdout_only and held) else records
    subset = [r for r in subset if r.label_path is not None]
    if not subset:
        raise ValueError("evaluate: no labeled frames")
    net = load_for_inference(config, ckpt_path)
    intr_net = intr.resized(config.input_size, config.input_size)
    cm = ConfusionMatrix(config.num_classes)
    for record in subset:
        frame = preprocess_frame(record, config, intr)
        out = predict_frame(net, frame, intr_net, config)
        cm.update(frame.labels, out["prediction"])
    return seg_metrics(cm), cm


def write_metrics(metrics, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(metrics.as_lines()) + "\n")


@dataclass
class MappingStats:
    frames_integrated: int
    frames_skipped: int
    points_dropped: int
    seconds: float
    ply_path: str

    @property
    def fps(self) -> float:
        return self.frames_integrated / self.seconds if self.seconds > 0 else 0.0


def frame_probabilities(out: dict, frame: Frame, intr_net: CameraIntrinsics,
                        config: PipelineConfig) -> tuple[PointCloud, np.ndarray]:
    """Per-point class probabilities sampled from the fused score map at
    each point's projected pixel; out-of-bounds points are dropped."""
    final = out["final"]
    c, fh, fw = final.shape
    e = np.exp(final.data - final.data.max(axis=0, keepdims=True))
    soft = e / e.sum(axis=0, keepdims=True)
    intr_f = intr_net.resized(fw, fh)
    from .voxelnet import project_pixels
    u, v, ok = project_pixels(frame.cloud.xyz, intr_f)
    idx = np.nonzero(ok)[0]
    probs = soft[:, v[idx], u[idx]].T.astype(np.float64)
    probs /= probs.sum(axis=1, keepdims=True)
    kept = PointCloud(frame.cloud.xyz[idx], frame.cloud.rgb[idx],
                      None if frame.cloud.pixels is None else frame.cloud.pixels[idx])
    return kept, probs


def run_mapping(data_dir: str, traj_path: str, ckpt_path: str,
                config: PipelineConfig, out_ply: str,
                log=lambda msg: None) -> MappingStats:
    """Segment every keyframe, integrate into the voxel map, export PLY."""
    records, intr = load_records(data_dir)
    poses = load_trajectory(traj_path)
    net = load_for_inference(config, ckpt_path)
    intr_net = intr.resized(config.input_size, config.input_size)
    vmap = VoxelMap(config.num_classes, config.voxel_size)
    keyframes = records[::config.keyframe_stride]
    skipped = dropped = integrated = 0
    t0 = time.perf_counter()
    for record in keyframes:
        pose = associate_pose(poses, record.timestamp, config.pose_tolerance)
        if pose is None:
            skipped += 1
            continue
        frame = preprocess_frame(record, config, intr)
        out = predict_frame(net, frame, intr_net, config)
        cloud, probs = frame_probabilities(out, frame, intr_net, config)
        dropped += frame.cloud.n - cloud.n
        integrate_labeled_cloud(vmap, cloud, probs, pose)
        integrated += 1
        log(f"frame t={record.timestamp:.2f}: map has {len(vmap)} voxels")
    seconds = time.perf_counter() - t0
    export_ply(vmap, palette(config.num_classes), out_ply)
    return MappingStats(integrated, skipped, dropped, seconds, out_ply)


def ground_truth_map(data_dir: str, config: PipelineConfig) -> VoxelMap:
    """Voxelized ground truth: one-hot per-point labels folded with the
    same Bayesian integration as the predicted map."""
    records, intr = load_records(data_dir)
    poses = load_trajectory(os.path.join(data_dir, "trajectory.txt"))
    vmap = VoxelMap(config.num_classes, config.voxel_size)
    eye = np.eye(config.num_classes)
    for record in records[::config.keyframe_stride]:
        pose = associate_pose(poses, record.timestamp, config.pose_tolerance)
        if pose is None or record.label_path is None:
            continue
        frame = preprocess_frame(record, config, intr)
        probs = eye[frame.point_labels]
        integrate_labeled_cloud(vmap, frame.cloud, probs, pose)
    return vmap


def mapping_accuracy(ply_map: VoxelMap, data_dir: str, config: PipelineConfig) -> float:
    return voxel_accuracy(ply_map, ground_truth_map(data_dir, config))
