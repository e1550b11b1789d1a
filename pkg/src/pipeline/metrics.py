"""
Metrics: Confusion-matrix segmentation scores.
- Entry (t, p) counts pixels of truth class t predicted as p.
- IoU_c = TP / (TP + FP + FN), accuracy_c = TP / (TP + FN), F1_c = 2TP / (2TP + FP + FN).
- Classes with no truth and no predicted pixels are excluded from the class means.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from src.pipeline.samples import MaskImage
from src.utils.errors import DimensionError, MaskValidationError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def count_pairs(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C counts for two equally shaped label arrays."""
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    for what, values in (("prediction", pred), ("truth", truth)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise MaskValidationError(f"{what} labels outside 0..{num_classes - 1}")
    flat = num_classes * truth + pred
    return np.bincount(flat, minlength=num_classes ** 2).reshape(num_classes, num_classes).astype(np.int64)


def accumulate(cm: ConfusionMatrix, pred: MaskImage, truth: MaskImage) -> ConfusionMatrix:
    """Return a new matrix with the pixels of (pred, truth) added."""
    if pred.values.shape != truth.values.shape:
        raise DimensionError(f"prediction {pred.values.shape} != truth {truth.values.shape}", axis="spatial")
    return ConfusionMatrix(cm.counts + count_pairs(pred.values, truth.values, cm.num_classes))


def merge(matrices: Sequence[ConfusionMatrix]) -> ConfusionMatrix:
    """Entrywise sum; per-image matrices can be built in parallel and reduced here."""
    if not matrices:
        raise UndefinedMetricError("nothing to merge")
    sizes = {m.num_classes for m in matrices}
    if len(sizes) != 1:
        raise DimensionError(f"cannot merge matrices of sizes {sorted(sizes)}", axis="class")
    return ConfusionMatrix(np.sum([m.counts for m in matrices], axis=0).astype(np.int64))


def _parts(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    return tp, fp, fn


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def present_classes(cm: ConfusionMatrix) -> np.ndarray:
    """Classes with at least one truth or predicted pixel."""
    return (cm.counts.sum(axis=0) + cm.counts.sum(axis=1)) > 0


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    tp, fp, fn = _parts(cm)
    return _ratio(tp, tp + fp + fn)


def accuracy_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Recall per class; NaN where the class has no truth pixels."""
    tp, _, fn = _parts(cm)
    return _ratio(tp, tp + fn)


def f1_per_class(cm: ConfusionMatrix) -> np.ndarray:
    tp, fp, fn = _parts(cm)
    return _ratio(2 * tp, 2 * tp + fp + fn)


def _class_mean(cm: ConfusionMatrix, values: np.ndarray, what: str) -> float:
    if cm.total == 0:
        raise UndefinedMetricError(f"{what} is undefined on an empty confusion matrix")
    kept = values[present_classes(cm) & ~np.isnan(values)]
    if kept.size == 0:
        raise UndefinedMetricError(f"{what} has no contributing class")
    return float(kept.mean())


def mean_iou(cm: ConfusionMatrix) -> float:
    return _class_mean(cm, iou_per_class(cm), "mean IoU")


def mean_accuracy(cm: ConfusionMatrix) -> float:
    return _class_mean(cm, accuracy_per_class(cm), "mean accuracy")


def mean_f1(cm: ConfusionMatrix) -> float:
    return _class_mean(cm, f1_per_class(cm), "mean F1")


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("pixel accuracy is undefined on an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def metrics_frame(cm: ConfusionMatrix, class_names: Sequence[str]) -> pd.DataFrame:
    """One row per class, then a `mean` row (present classes only) and a `pixel_accuracy` row."""
    if len(class_names) != cm.num_classes:
        raise DimensionError(f"{len(class_names)} class names for {cm.num_classes} classes", axis="class")
    present = present_classes(cm)
    df = pd.DataFrame({
        "class": list(class_names),
        "iou": iou_per_class(cm),
        "accuracy": accuracy_per_class(cm),
        "f1": f1_per_class(cm),
        "pixels": cm.counts.sum(axis=1),
        "present": present,
    })
    summary = pd.DataFrame([
        {"class": "mean", "iou": mean_iou(cm), "accuracy": mean_accuracy(cm), "f1": mean_f1(cm),
         "pixels": cm.total, "present": True},
        {"class": "pixel_accuracy", "iou": np.nan, "accuracy": pixel_accuracy(cm), "f1": np.nan,
         "pixels": cm.total, "present": True},
    ])
    return pd.concat([df, summary], ignore_index=True)
