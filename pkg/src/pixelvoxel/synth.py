"""Synthetic desk-scale scene generator.

Renders an axis-aligned room (floor, walls, ceiling and a few boxes,
each a distinct class) from a circular camera path by analytic ray
casting, and writes a dataset directory: rgb/depth/label images,
intrinsics and a ground-truth trajectory.  Fully deterministic per seed.

World frame follows the camera convention: x right, y down, z forward;
the floor is the plane of maximal y.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .config import PipelineConfig, palette
from .geometry import CameraIntrinsics, Pose, matrix_to_quat, save_intrinsics, save_trajectory

FLOOR_Y = 1.0
CEILING_Y = -1.5
ROOM_HALF = 2.2
CLASS_FLOOR, CLASS_WALL, CLASS_CEILING = 0, 1, 2
FRAME_DT = 0.1


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    label: int


@dataclass
class Scene:
    boxes: list[Box] = field(default_factory=list)


def build_scene(seed: int, num_classes: int) -> Scene:
    """Room plus 2-4 boxes; box count follows the class count."""
    n_boxes = int(np.clip(num_classes - 3, 2, 4))
    rng = np.random.default_rng(np.random.PCG64(seed))
    boxes = []
    # fixed angular slots keep boxes apart and off the camera circle
    slots = rng.permutation(n_boxes)
    for i in range(n_boxes):
        ang = 2 * np.pi * slots[i] / n_boxes + rng.uniform(-0.3, 0.3)
        r = rng.uniform(0.3, 0.75)
        cx, cz = r * np.cos(ang), r * np.sin(ang)
        sx = rng.uniform(0.25, 0.5)
        sz = rng.uniform(0.25, 0.5)
        height = rng.uniform(0.3, 0.7)
        lo = np.array([cx - sx / 2, FLOOR_Y - height, cz - sz / 2])
        hi = np.array([cx + sx / 2, FLOOR_Y, cz + sz / 2])
        boxes.append(Box(lo, hi, CLASS_CEILING + 1 + i))
    return Scene(boxes)


def default_intrinsics(size: int) -> CameraIntrinsics:
    # principal point at the exact image center so horizontal flips mirror
    # the projection consistently
    return CameraIntrinsics(0.8 * size, 0.8 * size,
                            (size - 1) / 2, (size - 1) / 2, size, size)


def camera_pose(frame: int, frames: int, timestamp: float) -> Pose:
    """Camera on a circle, pitched down toward the room center."""
    theta = 2 * np.pi * frame / frames
    radius = 1.5
    eye = np.array([radius * np.cos(theta), -0.2, radius * np.sin(theta)])
    target = np.array([0.0, 0.75, 0.0])
    z = target - eye
    z = z / np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    x = np.cross(down, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)  # camera -> world
    return Pose(matrix_to_quat(r), eye, timestamp)


def render_frame(scene: Scene, pose: Pose, intrinsics: CameraIntrinsics,
                 num_classes: int, noise_rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray-cast one frame; returns (rgb [h,w,3] in [0,1], depth meters
    [h,w] float64, labels [h,w] uint8).  Depth is the camera-z distance."""
    h, w = intrinsics.height, intrinsics.width
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack([(u - intrinsics.cx) / intrinsics.fx,
                         (v - intrinsics.cy) / intrinsics.fy,
                         np.ones((h, w))], axis=-1)
    rot = pose.rotation()
    d = dirs_cam @ rot.T
    o = pose.trans

    t_hit = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=np.uint8)

    def plane_hit(axis, value, label):
        nonlocal t_hit, labels
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (value - o[axis]) / d[..., axis]
        t = np.where(t > 1e-9, t, np.inf)
        closer = t < t_hit
        t_hit = np.where(closer, t, t_hit)
        labels = np.where(closer, label, labels)

    plane_hit(1, FLOOR_Y, CLASS_FLOOR)
    plane_hit(1, CEILING_Y, CLASS_CEILING)
    for axis, value in ((0, ROOM_HALF), (0, -ROOM_HALF), (2, ROOM_HALF), (2, -ROOM_HALF)):
        plane_hit(axis, value, CLASS_WALL)

    for box in scene.boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (box.lo - o) / d
            t2 = (box.hi - o) / d
        tn = np.minimum(t1, t2).max(axis=-1)
        tf = np.maximum(t1, t2).min(axis=-1)
        hit = (tn <= tf) & (tn > 1e-9) & (tn < t_hit)
        t_hit = np.where(hit, tn, t_hit)
        labels = np.where(hit, box.label, labels)

    pal = palette(num_classes).astype(np.float64) / 255.0
    rgb = pal[labels]
    rgb = rgb + noise_rng.uniform(-0.08, 0.08, size=rgb.shape)
    # mild depth shading so the texture is not purely flat color
    rgb = rgb * (1.0 - 0.04 * np.clip(t_hit, 0, 5))[..., None]
    return np.clip(rgb, 0.0, 1.0), t_hit, labels


def write_rgb(path: str, rgb01: np.ndarray) -> None:
    img = np.rint(rgb01 * 255).astype(np.uint8)
    cv2.imwrite(path, cv2.cvtColor(img, cv2.COLOR_RGB2BGR))


def read_rgb(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise IOError(f"cannot read image {path}")
    return (cv2.cvtColor(img, cv2.COLOR_BGR2RGB) / np.float32(255.0)).astype(np.float32)


def write_depth_mm(path: str, depth_m: np.ndarray) -> None:
    cv2.imwrite(path, np.rint(depth_m * 1000).astype(np.uint16))


def read_depth_m(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IOError(f"cannot read depth {path}")
    return img.astype(np.float64) / 1000.0


def write_labels(path: str, labels: np.ndarray) -> None:
    cv2.imwrite(path, labels.astype(np.uint8))


def read_labels(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IOError(f"cannot read labels {path}")
    return img.astype(np.uint8)


def synth_scene(seed: int, frames: int, config: PipelineConfig, out_dir: str) -> str:
    """Generate a dataset directory with rgb/, depth/, labels/,
    intrinsics.txt, trajectory.txt and frames.txt."""
    if frames < 1:
        raise ValueError("synth_scene: frames must be >= 1")
    scene = build_scene(seed, config.num_classes)
    intr = default_intrinsics(config.input_size)
    for sub in ("rgb", "depth", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    poses = []
    frame_lines = []
    for f in range(frames):
        ts = f * FRAME_DT
        pose = camera_pose(f, frames, ts)
        poses.append(pose)
        noise = np.random.default_rng(np.random.PCG64(seed * 1000003 + 7919 * f + 1))
        rgb, depth, labels = render_frame(scene, pose, intr, config.num_classes, noise)
        name = f"{f:06d}.png"
        write_rgb(os.path.join(out_dir, "rgb", name), rgb)
        write_depth_mm(os.path.join(out_dir, "depth", name), depth)
        write_labels(os.path.join(out_dir, "labels", name), labels)
        frame_lines.append(f"{ts:.6f} rgb/{name} depth/{name} labels/{name}")

    save_intrinsics(intr, os.path.join(out_dir, "intrinsics.txt"))
    save_trajectory(poses, os.path.join(out_dir, "trajectory.txt"))
    with open(os.path.join(out_dir, "frames.txt"), "w") as fh:
        fh.write("# timestamp rgb depth labels\n")
        fh.write("\n".join(frame_lines) + "\n")
    return out_dir
