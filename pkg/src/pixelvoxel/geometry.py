"""RGB-D geometry: camera model, depth back-projection, cloud
downsampling, rigid transforms and TUM-style trajectory files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEPTH_MIN_M = 0.3
DEPTH_MAX_M = 8.0


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def resized(self, width: int, height: int) -> "CameraIntrinsics":
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                self.cx * sx, self.cy * sy, width, height)


def load_intrinsics(path: str) -> CameraIntrinsics:
    """Text file holding "fx fy cx cy width height" on one line."""
    with open(path) as fh:
        parts = fh.read().split()
    if len(parts) != 6:
        raise ValueError(f"{path}: expected 6 intrinsics values, got {len(parts)}")
    fx, fy, cx, cy = map(float, parts[:4])
    return CameraIntrinsics(fx, fy, cx, cy, int(parts[4]), int(parts[5]))


def save_intrinsics(intr: CameraIntrinsics, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"{intr.fx:.9g} {intr.fy:.9g} {intr.cx:.9g} {intr.cy:.9g} "
                 f"{intr.width} {intr.height}\n")


@dataclass
class PointCloud:
    """n points as xyz meters (camera or world frame) plus [0,1] colors.

    ``pixels`` optionally records each point's source pixel (u, v) so the
    training pipeline can look up per-point labels.
    """
    xyz: np.ndarray           # [n,3] float64
    rgb: np.ndarray           # [n,3] float in [0,1]
    pixels: np.ndarray | None = None  # [n,2] int (u,v)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3 or self.xyz.shape[0] < 1:
            raise ValueError(f"PointCloud: xyz shape {self.xyz.shape}")
        if self.rgb.shape != self.xyz.shape:
            raise ValueError("PointCloud: rgb shape mismatch")

    @property
    def n(self) -> int:
        return self.xyz.shape[0]


def backproject_depth(depth: np.ndarray, rgb: np.ndarray,
                      intrinsics: CameraIntrinsics,
                      min_depth: float = DEPTH_MIN_M,
                      max_depth: float = DEPTH_MAX_M) -> tuple[PointCloud, int]:
    """Lift a metric depth map [h,w] to a cloud: x=(u-cx)z/fx, y=(v-cy)z/fy.

    ``rgb`` is [h,w,3] in [0,1].  Pixels with non-finite, non-positive or
    out-of-range depth are skipped; their count is returned alongside.
    """
    h, w = depth.shape
    if rgb.shape != (h, w, 3):
        raise ValueError(f"backproject_depth: rgb {rgb.shape} vs depth {depth.shape}")
    valid = np.isfinite(depth) & (depth > min_depth) & (depth <= max_depth)
    invalid = int(valid.size - valid.sum())
    if not valid.any():
        raise ValueError("backproject_depth: no valid depth pixels")
    v, u = np.nonzero(valid)
    z = depth[v, u].astype(np.float64)
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    cloud = PointCloud(np.stack([x, y, z], axis=1),
                       rgb[v, u].astype(np.float64),
                       pixels=np.stack([u, v], axis=1))
    return cloud, invalid


def uniform_downsample(cloud: PointCloud, target: int) -> PointCloud:
    """Deterministic stride selection of exactly ``target`` points:
    indices floor(i*n/target); short clouds repeat cyclically."""
    if target < 1:
        raise ValueError("uniform_downsample: target must be >= 1")
    n = cloud.n
    if n >= target:
        idx = (np.arange(target) * n) // target
    else:
        idx = np.arange(target) % n
    return PointCloud(cloud.xyz[idx].copy(), cloud.rgb[idx].copy(),
                      None if cloud.pixels is None else cloud.pixels[idx].copy())


# ---------------------------------------------------------------------------
# rigid transforms


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) to a 3x3 rotation matrix."""
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to (qx, qy, qz, qw), w >= 0."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        x = 0.25 * s
        w = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        y = 0.25 * s
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        z = 0.25 * s
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
    q = np.array([x, y, z, w])
    if w < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass
class Pose:
    """Rigid transform (rotation as unit quaternion qx qy qz qw plus
    translation) aligning a frame's cloud into the world map."""
    quat: np.ndarray
    trans: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.quat = np.asarray(self.quat, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        norm = np.linalg.norm(self.quat)
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"Pose: quaternion norm {norm} far from unit")
        self.quat = self.quat / norm

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3), timestamp)

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def inverse(self) -> "Pose":
        r = self.rotation().T
        return Pose(matrix_to_quat(r), -r @ self.trans, self.timestamp)

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return xyz @ self.rotation().T + self.trans


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    """p' = R p + t on coordinates; colors (and pixel tags) unchanged."""
    return PointCloud(pose.apply(cloud.xyz), cloud.rgb.copy(),
                      None if cloud.pixels is None else cloud.pixels.copy())


# ---------------------------------------------------------------------------
# trajectory files ("timestamp tx ty tz qx qy qz qw" per line)


def load_trajectory(path: str) -> list[Pose]:
    poses: list[Pose] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            try:
                poses.append(Pose(np.array([qx, qy, qz, qw]),
                                  np.array([tx, ty, tz]), ts))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not poses:
        raise ValueError(f"{path}: empty trajectory")
    return poses


def save_trajectory(poses: list[Pose], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for p in poses:
            fh.write(f"{p.timestamp:.6f} "
                     + " ".join(f"{v:.9f}" for v in p.trans)
                     + " " + " ".join(f"{v:.9f}" for v in p.quat) + "\n")


def associate_pose(poses: list[Pose], timestamp: float,
                   tolerance: float = 0.02) -> Pose | None:
    """Nearest-timestamp lookup; None when nothing is within tolerance."""
    best = min(poses, key=lambda p: abs(p.timestamp - timestamp))
    if abs(best.timestamp - timestamp) > tolerance:
        return None
    return best
