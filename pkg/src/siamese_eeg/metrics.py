"""Confusion matrices and per-class classification metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError

N_CLASSES = 6


def confusion_matrix(true, pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise RejectedInputError("true and predicted labels differ in length")
    if len(true) and (min(true.min(), pred.min()) < 0 or max(true.max(), pred.max()) >= n_classes):
        raise RejectedInputError(f"labels must lie in 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    # classes whose precision / recall / F1 denominator was zero (value reported as 0)
    undefined_precision: tuple[int, ...] = ()
    undefined_recall: tuple[int, ...] = ()
    undefined_f1: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "undefined": {"precision": list(self.undefined_precision),
                          "recall": list(self.undefined_recall),
                          "f1": list(self.undefined_f1)},
        }


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    zero = den == 0
    out = np.divide(num, den, out=np.zeros(len(num)), where=~zero)
    return out, tuple(int(i) for i in np.flatnonzero(zero))


def metrics(cm) -> ClassMetrics:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise RejectedInputError("confusion matrix must be square")
    if (cm < 0).any():
        raise RejectedInputError("confusion matrix has negative counts")
    total = cm.sum()
    if total == 0:
        raise RejectedInputError("confusion matrix is empty")
    diag = np.diag(cm).astype(np.float64)
    precision, bad_p = _safe_ratio(diag, cm.sum(axis=0).astype(np.float64))
    recall, bad_r = _safe_ratio(diag, cm.sum(axis=1).astype(np.float64))
    f1, bad_f = _safe_ratio(2 * precision * recall, precision + recall)
    return ClassMetrics(float(diag.sum() / total), precision, recall, f1, bad_p, bad_r, bad_f)


def row_normalize(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)


def average_confusion(matrices) -> np.ndarray:
    """Mean of row-normalized matrices (one per subject)."""
    matrices = list(matrices)
    if not matrices:
        raise RejectedInputError("no confusion matrices to average")
    return np.mean([row_normalize(m) for m in matrices], axis=0)
