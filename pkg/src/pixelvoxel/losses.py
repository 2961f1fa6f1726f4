"""Class-weighted loss, class-frequency statistics, learning-rate
schedules and segmentation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

IGNORE_LABEL = 255
DEFAULT_DELTA = 0.025  # rare-class frequency threshold (the 85%-15% rule)


def class_weight(p: float, delta: float = DEFAULT_DELTA) -> float:
    """Per-class loss weight 2^ceil(log10(delta/p))."""
    if not 0 < p <= 1:
        raise ValueError("class_weight: frequency must be in (0, 1]")
    if delta <= 0:
        raise ValueError("class_weight: delta must be positive")
    return 2.0 ** math.ceil(math.log10(delta / p))


@dataclass
class ClassStats:
    """Pixel frequencies and the derived rare-class weighting."""
    freq: np.ndarray                 # [c], sums to 1 over labeled pixels
    weights: np.ndarray              # [c], 2^ceil(log10(delta/p)); 1 for absent classes
    delta: float
    rare_classes: list[int]          # {j : 0 < p_j < delta}
    rare_freq: float                 # summed frequency of the rare set
    absent_classes: list[int] = field(default_factory=list)

    @classmethod
    def uniform(cls, num_classes: int, delta: float = DEFAULT_DELTA) -> "ClassStats":
        return cls(np.full(num_classes, 1.0 / num_classes),
                   np.ones(num_classes), delta, [], 0.0)


def class_frequencies(label_images, num_classes: int,
                      delta: float = DEFAULT_DELTA,
                      ignore: int = IGNORE_LABEL) -> ClassStats:
    counts = np.zeros(num_classes, dtype=np.int64)
    for labels in label_images:
        lab = np.asarray(labels)
        keep = lab[lab != ignore]
        if keep.size and (keep.min() < 0 or keep.max() >= num_classes):
            raise ValueError(f"labels outside [0,{num_classes}) present")
        counts += np.bincount(keep.reshape(-1), minlength=num_classes)
    total = counts.sum()
    if total == 0:
        raise ValueError("class_frequencies: no labeled pixels")
    freq = counts / total
    weights = np.ones(num_classes)
    absent = []
    for j in range(num_classes):
        if freq[j] > 0:
            weights[j] = class_weight(freq[j], delta)
        else:
            absent.append(j)
    rare = [j for j in range(num_classes) if 0 < freq[j] < delta]
    return ClassStats(freq, weights, delta, rare, float(freq[rare].sum()), absent)


def weighted_nll_loss(scores: Tensor, labels: np.ndarray, stats: ClassStats,
                      ignore: int = IGNORE_LABEL) -> Tensor:
    """Mean class-weighted negative log-likelihood.

    ``scores`` is [c, *spatial]; ``labels`` matches the spatial shape.
    Per contributing pixel: -w_y * log softmax(scores)_y; the gradient is
    w_y * (softmax - onehot) / N.
    """
    c = scores.shape[0]
    lab = np.asarray(labels)
    if lab.shape != scores.shape[1:]:
        raise ad.ShapeError(f"loss: labels {lab.shape} vs scores {scores.shape}")
    flat_scores = scores.data.reshape(c, -1).astype(np.float64)
    flat_lab = lab.reshape(-1)
    keep = flat_lab != ignore
    n = int(keep.sum())
    if n == 0:
        raise ValueError("weighted_nll_loss: all pixels ignored")
    if flat_lab[keep].min() < 0 or flat_lab[keep].max() >= c:
        raise ValueError(f"labels outside [0,{c})")

    shifted = flat_scores - flat_scores.max(axis=0, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    logp = shifted - logz
    cols = np.nonzero(keep)[0]
    y = flat_lab[cols]
    w = stats.weights[y]
    loss = -(w * logp[y, cols]).sum() / n

    def backward(g):
        if scores.requires_grad:
            soft = np.exp(logp)
            grad = np.zeros_like(flat_scores)
            grad[:, cols] = soft[:, cols] * w[None, :]
            grad[y, cols] -= w
            grad *= float(g) / n
            scores._accumulate(grad.reshape(scores.shape).astype(scores.dtype))

    return ad._node(np.asarray(loss, dtype=scores.dtype), (scores,), backward, "weighted_nll")


# ---------------------------------------------------------------------------
# learning-rate schedules


def lr_step(base: float, epoch: int, step_epochs: int = 15, gamma: float = 0.1) -> float:
    """Step policy: base for the first ``step_epochs`` epochs, then base*gamma."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base if epoch < step_epochs else base * gamma


def lr_poly(base: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    """Polynomial decay: base * (1 - iter/max_iter)^power."""
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


# ---------------------------------------------------------------------------
# metrics


class ConfusionMatrix:
    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) \
            if counts is None else np.asarray(counts, dtype=np.int64).copy()
        if self.counts.shape != (num_classes, num_classes):
            raise ValueError("confusion matrix must be square c x c")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be nonnegative")

    def update(self, truth: np.ndarray, pred: np.ndarray,
               ignore: int = IGNORE_LABEL) -> None:
        t = np.asarray(truth).reshape(-1)
        p = np.asarray(pred).reshape(-1)
        keep = t != ignore
        t, p = t[keep], p[keep]
        idx = t * self.num_classes + p
        self.counts += np.bincount(idx, minlength=self.num_classes ** 2) \
            .reshape(self.num_classes, self.num_classes)


@dataclass
class SegMetrics:
    pixel_acc: float
    mean_acc: float
    mean_iou: float
    per_class_acc: np.ndarray
    per_class_iou: np.ndarray
    excluded: list[int]

    def as_lines(self) -> list[str]:
        lines = [f"pixel_acc={self.pixel_acc:.6f}",
                 f"mean_acc={self.mean_acc:.6f}",
                 f"mean_iou={self.mean_iou:.6f}"]
        for j, (a, i) in enumerate(zip(self.per_class_acc, self.per_class_iou)):
            lines.append(f"class{j}_acc={a:.6f}")
            lines.append(f"class{j}_iou={i:.6f}")
        if self.excluded:
            lines.append("excluded_classes=" + ",".join(map(str, self.excluded)))
        return lines


def seg_metrics(cm: ConfusionMatrix) -> SegMetrics:
    """Pixel accuracy, mean accuracy and mean IoU from a confusion matrix.

    Classes with an all-zero row and column are excluded from the means.
    """
    n = cm.counts.astype(np.float64)
    if n.sum() == 0:
        raise ValueError("seg_metrics: empty confusion matrix")
    t = n.sum(axis=1)
    col = n.sum(axis=0)
    diag = np.diag(n)
    pixel_acc = diag.sum() / t.sum()

    acc = np.full(cm.num_classes, np.nan)
    iou = np.full(cm.num_classes, np.nan)
    excluded = []
    for j in range(cm.num_classes):
        denom_iou = t[j] + col[j] - diag[j]
        if denom_iou == 0:
            excluded.append(j)
            continue
        iou[j] = diag[j] / denom_iou
        if t[j] > 0:
            acc[j] = diag[j] / t[j]
    valid_acc = ~np.isnan(acc)
    valid_iou = ~np.isnan(iou)
    mean_acc = float(acc[valid_acc].mean()) if valid_acc.any() else 0.0
    mean_iou = float(iou[valid_iou].mean()) if valid_iou.any() else 0.0
    return SegMetrics(float(pixel_acc), mean_acc, mean_iou, acc, iou, excluded)
