"""Global semantic voxel map with recursive Bayesian label refinement
and ASCII PLY export."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, Pose, transform_cloud

PROB_FLOOR = 1e-6  # applied to likelihoods before the Bayesian product
DEFAULT_VOXEL_SIZE = 0.02


def bayes_update(prior: np.ndarray, likelihood: np.ndarray
                 ) -> tuple[np.ndarray, bool]:
    """Posterior ~ prior * likelihood, renormalized.

    Returns (posterior, conflicted).  When every product is zero the
    prior is returned unchanged with the conflict flag set.
    """
    p = np.asarray(prior, dtype=np.float64)
    l = np.asarray(likelihood, dtype=np.float64)
    if p.shape != l.shape:
        raise ValueError(f"bayes_update: shapes {p.shape} vs {l.shape}")
    if (p < 0).any() or (l < 0).any() or p.sum() <= 0 or l.sum() <= 0:
        raise ValueError("bayes_update: inputs must be nonnegative with positive sums")
    prod = p * l
    z = prod.sum()
    if z == 0:
        return p / p.sum(), True
    return prod / z, False


@dataclass
class LabeledVoxel:
    probs: np.ndarray        # [c], sums to 1
    count: int = 0
    color: np.ndarray = field(default_factory=lambda: np.zeros(3))


class VoxelMap:
    """Sparse map from integer 3D cell indices to class distributions.

    Cell index = floor(world coordinate / edge length) per component.
    Unseen voxels start from the uniform prior.
    """

    def __init__(self, num_classes: int, voxel_size: float = DEFAULT_VOXEL_SIZE):
        if voxel_size <= 0:
            raise ValueError("voxel size must be positive")
        self.num_classes = num_classes
        self.voxel_size = voxel_size
        self.cells: dict[tuple[int, int, int], LabeledVoxel] = {}
        self.conflicts = 0

    def __len__(self) -> int:
        return len(self.cells)

    def key_of(self, xyz: np.ndarray) -> tuple[int, int, int]:
        i = np.floor(np.asarray(xyz) / self.voxel_size).astype(np.int64)
        return int(i[0]), int(i[1]), int(i[2])

    def cell_center(self, key: tuple[int, int, int]) -> np.ndarray:
        return (np.asarray(key, dtype=np.float64) + 0.5) * self.voxel_size


def integrate_labeled_cloud(vmap: VoxelMap, cloud: PointCloud,
                            probs: np.ndarray, pose: Pose) -> None:
    """Transform the cloud into the world frame and fold each point's
    class distribution into its voxel by a Bayesian update.

    Points landing in the same voxel within a frame update it
    sequentially in point order.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (cloud.n, vmap.num_classes):
        raise ValueError(f"integrate: probs {probs.shape} vs "
                         f"({cloud.n},{vmap.num_classes})")
    sums = probs.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-4:
        raise ValueError("integrate: probability rows must sum to 1")
    world = transform_cloud(cloud, pose)
    keys = np.floor(world.xyz / vmap.voxel_size).astype(np.int64)
    uniform = np.full(vmap.num_classes, 1.0 / vmap.num_classes)
    for i in range(cloud.n):
        key = (int(keys[i, 0]), int(keys[i, 1]), int(keys[i, 2]))
        voxel = vmap.cells.get(key)
        if voxel is None:
            voxel = LabeledVoxel(uniform.copy())
            vmap.cells[key] = voxel
        likelihood = np.maximum(probs[i], PROB_FLOOR)
        voxel.probs, conflicted = bayes_update(voxel.probs, likelihood)
        vmap.conflicts += conflicted
        voxel.count += 1
        voxel.color += (world.rgb[i] - voxel.color) / voxel.count


# ---------------------------------------------------------------------------
# PLY export


def export_ply(vmap: VoxelMap, palette: np.ndarray, path: str) -> None:
    """ASCII PLY, one vertex per voxel at its cell center, colored by the
    argmax class; vertices sorted by cell index for determinism."""
    if len(vmap) == 0:
        raise ValueError("export_ply: empty map")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vmap)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property uchar label",
        "property float confidence",
        "end_header",
    ]
    for key in sorted(vmap.cells):
        voxel = vmap.cells[key]
        center = vmap.cell_center(key)
        label = int(voxel.probs.argmax())
        r, g, b = palette[label]
        conf = float(voxel.probs.max())
        lines.append(f"{center[0]:.6f} {center[1]:.6f} {center[2]:.6f} "
                     f"{int(r)} {int(g)} {int(b)} {label} {conf:.6f}")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"export_ply: cannot write {path}: {exc}") from exc


@dataclass
class PlyVertex:
    xyz: np.ndarray
    rgb: tuple[int, int, int]
    label: int
    confidence: float


def parse_ply(path: str) -> list[PlyVertex]:
    """Round-trip reader for the export format above."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    count = None
    body_at = None
    for i, ln in enumerate(lines):
        if ln.startswith("element vertex "):
            count = int(ln.split()[-1])
        if ln == "end_header":
            body_at = i + 1
            break
    if count is None or body_at is None:
        raise ValueError(f"{path}: malformed PLY header")
    verts = []
    for ln in lines[body_at:body_at + count]:
        parts = ln.split()
        verts.append(PlyVertex(np.array([float(p) for p in parts[:3]]),
                               (int(parts[3]), int(parts[4]), int(parts[5])),
                               int(parts[6]), float(parts[7])))
    if len(verts) != count:
        raise ValueError(f"{path}: vertex count mismatch")
    return verts


def map_from_ply(path: str, num_classes: int, voxel_size: float) -> VoxelMap:
    """Rebuild a label-only VoxelMap from an exported PLY (one-hot
    distributions from the stored argmax labels)."""
    vmap = VoxelMap(num_classes, voxel_size)
    for vert in parse_ply(path):
        key = vmap.key_of(vert.xyz)
        probs = np.full(num_classes, 0.0)
        probs[vert.label] = 1.0
        vmap.cells[key] = LabeledVoxel(probs, 1, np.asarray(vert.rgb, dtype=np.float64) / 255.0)
    return vmap


def voxel_accuracy(pred: VoxelMap, truth: VoxelMap) -> float:
    """Fraction of predicted voxels whose argmax class matches the
    ground-truth map, over cells present in both."""
    common = pred.cells.keys() & truth.cells.keys()
    if not common:
        raise ValueError("voxel_accuracy: maps share no cells")
    hits = sum(int(pred.cells[k].probs.argmax() == truth.cells[k].probs.argmax())
               for k in common)
    return hits / len(common)
