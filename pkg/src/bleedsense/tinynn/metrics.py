"""Evaluation reports and penultimate-layer feature export."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import confusion_matrix

from .model import N_CLASSES

INTERFERENCE = 0  # class index of the non-bleeding interference class


def _is_bleeding(k: int) -> bool:
    return k != INTERFERENCE


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray  # rows true, columns predicted
    class_names: tuple[str, ...] = tuple(str(k) for k in range(N_CLASSES))

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total)

    @property
    def recall(self) -> np.ndarray:
        support = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), support, out=np.zeros(N_CLASSES), where=support > 0)

    @property
    def precision(self) -> np.ndarray:
        predicted = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), predicted, out=np.zeros(N_CLASSES), where=predicted > 0)

    @property
    def n_errors(self) -> int:
        return self.total - int(np.trace(self.confusion))

    def _errors_where(self, keep) -> int:
        return int(sum(self.confusion[i, j] for i in range(N_CLASSES) for j in range(N_CLASSES)
                       if i != j and keep(i, j)))

    @property
    def adjacent_errors(self) -> int:
        """Errors between consecutive bleeding levels."""
        return self._errors_where(lambda i, j: _is_bleeding(i) and _is_bleeding(j) and abs(i - j) == 1)

    @property
    def non_adjacent_errors(self) -> int:
        """Errors between bleeding levels two or more steps apart."""
        return self._errors_where(lambda i, j: _is_bleeding(i) and _is_bleeding(j) and abs(i - j) >= 2)

    @property
    def interference_errors(self) -> int:
        return self._errors_where(lambda i, j: i == INTERFERENCE or j == INTERFERENCE)

    @property
    def adjacent_error_fraction(self) -> float:
        return self.adjacent_errors / self.n_errors if self.n_errors else 0.0

    @property
    def interference_recall(self) -> float:
        return float(self.recall[INTERFERENCE])

    @property
    def interference_precision(self) -> float:
        return float(self.precision[INTERFERENCE])

    def summary_line(self) -> str:
        return (f"accuracy={self.accuracy:.4f}, adjacent_err={self.adjacent_error_fraction:.4f}, "
                f"interference_recall={self.interference_recall:.4f}")

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.class_names])
        for name, row in zip(self.class_names, self.confusion):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "n_windows": self.total,
            "accuracy": self.accuracy,
            "recall": self.recall.tolist(),
            "precision": self.precision.tolist(),
            "n_errors": self.n_errors,
            "adjacent_errors": self.adjacent_errors,
            "adjacent_error_fraction": self.adjacent_error_fraction,
            "non_adjacent_errors": self.non_adjacent_errors,
            "interference_errors": self.interference_errors,
            "interference_recall": self.interference_recall,
            "interference_precision": self.interference_precision,
            "confusion": self.confusion.tolist(),
        }


def report_from_predictions(y_true, y_pred, class_names=None) -> EvalReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty test set")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred lengths differ")
    cm = confusion_matrix(y_true, y_pred, labels=np.arange(N_CLASSES))
    if class_names is None:
        return EvalReport(cm)
    return EvalReport(cm, tuple(class_names))


def evaluate(model, X, y, class_names=None) -> EvalReport:
    """Confusion-matrix report of ``model.predict(X)`` against ``y``."""
    if len(X) == 0:
        raise ValueError("empty test set")
    return report_from_predictions(y, model.predict(X), class_names)


def export_features(model, X, y=None, mixtures=None, recording_ids=None) -> str:
    """CSV with one row per window: metadata columns then the 64 fc1 activations."""
    feats = model.transform(X)
    n = len(feats)
    y = np.full(n, -1) if y is None else np.asarray(y)
    mixtures = [""] * n if mixtures is None else list(mixtures)
    recording_ids = [""] * n if recording_ids is None else list(recording_ids)
    if not (len(y) == len(mixtures) == len(recording_ids) == n):
        raise ValueError("metadata columns must have one entry per window")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recording_id", "label", "mixture", *(f"f{k}" for k in range(feats.shape[1]))])
    for rid, label, mix, row in zip(recording_ids, y, mixtures, feats):
        w.writerow([rid, int(label), mix, *(repr(float(v)) for v in row)])
    return buf.getvalue()
