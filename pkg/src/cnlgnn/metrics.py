"""Classification metrics: per-class precision/recall/F1, macro/micro summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnlgnn.errors import DataError


@dataclass(frozen=True)
class MetricReport:
    confusion: np.ndarray  # [C, C], rows = true class, cols = predicted
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_f1: float
    accuracy: float

    def primary_f1(self, average: str = "macro") -> float:
        if average == "macro":
            return self.macro_f1
        if average == "micro":
            return self.micro_f1
        raise DataError(f"unknown f1 average {average!r}")

    def as_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class": {
                "precision": self.per_class_precision.tolist(),
                "recall": self.per_class_recall.tolist(),
                "f1": self.per_class_f1.tolist(),
            },
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "accuracy": self.accuracy,
        }


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray, class_count: int) -> MetricReport:
    """Macro averages run over classes present in the ground truth; 0/0 -> 0."""
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if y_true.size == 0:
        raise DataError("compute_metrics: empty label set")
    if y_true.shape != y_pred.shape:
        raise DataError("compute_metrics: prediction/label length mismatch")

    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    tp = np.diag(confusion).astype(np.float64)
    pred_per_class = confusion.sum(axis=0).astype(np.float64)
    true_per_class = confusion.sum(axis=1).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_per_class > 0, tp / pred_per_class, 0.0)
        recall = np.where(true_per_class > 0, tp / true_per_class, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)

    present = true_per_class > 0
    accuracy = float(tp.sum() / y_true.size)
    micro_f1 = accuracy  # single-label classification: micro P = R = accuracy
    confusion.setflags(write=False)
    return MetricReport(
        confusion=confusion,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_precision=float(precision[present].mean()),
        macro_recall=float(recall[present].mean()),
        macro_f1=float(f1[present].mean()),
        micro_f1=micro_f1,
        accuracy=accuracy,
    )


def majority_class_report(y_true: np.ndarray, class_count: int) -> MetricReport:
    """Baseline that always predicts the most frequent true class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    majority = int(np.bincount(y_true, minlength=class_count).argmax())
    return compute_metrics(y_true, np.full_like(y_true, majority), class_count)
