"""Confusion-matrix segmentation metrics: pixel accuracy, mIoU, F1."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = pixels of true class i predicted as class j."""

    counts: np.ndarray = field(repr=False)

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ValueError(f"cannot merge confusion matrices {self.counts.shape} and {other.counts.shape}")
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, pred, truth) -> ConfusionMatrix:
    pred = np.asarray(pred).astype(np.int64).ravel()
    truth = np.asarray(truth).astype(np.int64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"prediction and truth sizes differ: {pred.size} vs {truth.size}")
    n = cm.num_classes
    for name, arr in (("prediction", pred), ("truth", truth)):
        bad = (arr < 0) | (arr >= n)
        if bad.any():
            k = int(np.argmax(bad))
            raise ValueError(f"{name} index out of range [0, {n}) at flat pixel {k}: {int(arr[k])}")
    add = np.bincount(truth * n + pred, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(cm.counts + add)


def _check_nonempty(cm: ConfusionMatrix) -> None:
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")


def _included(cm: ConfusionMatrix, include_background: bool) -> np.ndarray:
    rows = cm.counts.sum(axis=1)
    cols = cm.counts.sum(axis=0)
    present = (rows + cols) > 0
    if not include_background:
        present[0] = False
    if not present.any():
        raise ValueError("no class to average over")
    return present


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    _check_nonempty(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    d = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - d
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, d / np.where(denom > 0, denom, 1), np.nan)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    d = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=1) + cm.counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * d / np.where(denom > 0, denom, 1), np.nan)


def mean_iou(cm: ConfusionMatrix, include_background: bool = True) -> float:
    """Mean IoU over classes present in prediction or truth."""
    _check_nonempty(cm)
    keep = _included(cm, include_background)
    return float(per_class_iou(cm)[keep].mean())


def f1(cm: ConfusionMatrix, include_background: bool = True) -> float:
    _check_nonempty(cm)
    keep = _included(cm, include_background)
    return float(per_class_f1(cm)[keep].mean())


def summary(cm: ConfusionMatrix, include_background: bool = True) -> dict[str, float]:
    return {
        "acc": pixel_accuracy(cm),
        "miou": mean_iou(cm, include_background),
        "f1": f1(cm, include_background),
    }


def write_metrics_csv(cm: ConfusionMatrix, path: str | Path, include_background: bool = True) -> Path:
    """Per-class rows (IoU, F1, support) and a closing ``mean`` row with Acc/mIoU/F1."""
    path = Path(path)
    iou = per_class_iou(cm)
    f = per_class_f1(cm)
    support = cm.counts.sum(axis=1)
    s = summary(cm, include_background)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "acc", "iou", "f1", "support"])
        for c in range(cm.num_classes):
            w.writerow([f"class_{c}", "", _fmt(iou[c]), _fmt(f[c]), int(support[c])])
        w.writerow(["mean", _fmt(s["acc"]), _fmt(s["miou"]), _fmt(s["f1"]), cm.total])
    return path


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"
