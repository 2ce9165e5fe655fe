"""Segmentation quality metrics over integer label maps.

All metrics reduce a k x k confusion matrix whose rows are ground-truth
classes and columns predictions. Classes absent from both prediction and
ground truth are undefined and drop out of the averages instead of
polluting them with zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "ConfusionMatrix",
    "accumulate",
    "iou_per_class",
    "mean_iou",
    "weighted_iou",
    "fw_iou",
    "pixel_accuracy",
]


@dataclass
class ConfusionMatrix:
    """Pixel counts, rows ground truth, columns prediction."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InputError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise InputError("confusion matrix counts must be non-negative")
        self.counts = counts

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        if num_classes < 2:
            raise InputError(f"need at least 2 classes, got {num_classes}")
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Sum of two matrices; addition makes parallel accumulation exact."""
        if other.num_classes != self.num_classes:
            raise InputError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair into the matrix, in place."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InputError(f"pred shape {pred.shape} does not match gt shape {gt.shape}")
    if not np.issubdtype(pred.dtype, np.integer) or not np.issubdtype(gt.dtype, np.integer):
        raise InputError("label maps must be integer arrays")
    k = cm.num_classes
    pred = pred.ravel().astype(np.int64)
    gt = gt.ravel().astype(np.int64)
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            offending = int(arr[(arr < 0) | (arr >= k)][0])
            raise InputError(f"{name} holds label {offending} outside [0, {k - 1}]")
    binned = np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
    cm.counts += binned
    return cm


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Intersection over union per class; NaN where the class is absent
    from both prediction and ground truth."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    out = np.full(cm.num_classes, np.nan)
    defined = union > 0
    out[defined] = tp[defined] / union[defined]
    return out


def mean_iou(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the defined per-class IoU values."""
    ious = iou_per_class(cm)
    if np.isnan(ious).all():
        raise InputError("every class is undefined, mean IoU does not exist")
    return float(np.nanmean(ious))


def weighted_iou(shares, ious) -> float:
    """Weighted mean of IoU values; NaN entries and their weight drop out."""
    shares = np.asarray(shares, dtype=np.float64)
    ious = np.asarray(ious, dtype=np.float64)
    if shares.shape != ious.shape:
        raise InputError(f"shares shape {shares.shape} does not match ious {ious.shape}")
    defined = ~np.isnan(ious)
    weight = shares[defined].sum()
    if weight <= 0:
        raise InputError("no class with positive weight has a defined IoU")
    return float((shares[defined] * ious[defined]).sum() / weight)


def fw_iou(cm: ConfusionMatrix) -> float:
    """IoU weighted by each class's share of the ground-truth pixels."""
    total = cm.counts.sum()
    if total == 0:
        raise InputError("confusion matrix is empty")
    shares = cm.counts.sum(axis=1).astype(np.float64) / total
    return weighted_iou(shares, iou_per_class(cm))


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    """Correct pixels over all pixels."""
    total = cm.counts.sum()
    if total == 0:
        raise InputError("confusion matrix is empty")
    return float(np.trace(cm.counts) / total)
