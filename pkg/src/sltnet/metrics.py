"""Confusion matrices and mean intersection-over-union."""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ValidationError
from .events import IGNORE_ID


class ConfusionMatrix:
    """counts[t, p] = number of pixels with truth t predicted as p."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ArgumentError("num_classes must be positive")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, truth: np.ndarray, ignore_id: int = IGNORE_ID) -> None:
        pred, truth = np.asarray(pred), np.asarray(truth)
        if pred.shape != truth.shape:
            raise ArgumentError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
        keep = truth != ignore_id
        t = truth[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        c = self.num_classes
        if t.size and (t.min() < 0 or t.max() >= c or p.min() < 0 or p.max() >= c):
            raise ValidationError(f"class ids must lie in [0, {c})")
        self.counts += np.bincount(t * c + p, minlength=c * c).reshape(c, c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix | np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where a class is absent from both truth and prediction) and their mean."""
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    if counts.sum() == 0:
        raise ValidationError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    iou = np.full(len(tp), np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return iou, float(np.mean(iou[present]))
