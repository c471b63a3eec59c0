"""Metric suites and CSV exports for localization and classification runs.

Conventions: ``std`` is the population standard deviation and percentiles
use linear interpolation between order statistics (numpy's default).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class UndefinedMetricWarning(UserWarning):
    """A class had no predicted positives; its precision was set to 0."""


@dataclass(frozen=True)
class LocMetrics:
    mean: float
    std: float
    median: float
    p80: float
    max: float
    n: int

    def rows(self) -> list[tuple[str, float]]:
        return [("mean", self.mean), ("std", self.std), ("median", self.median),
                ("p80", self.p80), ("max", self.max), ("n", self.n)]


@dataclass(frozen=True)
class ClsMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    zero_predicted: tuple[int, ...] = ()

    def rows(self) -> list[tuple[str, float]]:
        out: list[tuple[str, float]] = [("accuracy", self.accuracy),
                                        ("macro_precision", self.macro_precision),
                                        ("macro_recall", self.macro_recall),
                                        ("macro_f1", self.macro_f1)]
        for k in range(len(self.precision)):
            out += [(f"precision_{k}", self.precision[k]), (f"recall_{k}", self.recall[k]),
                    (f"f1_{k}", self.f1[k]), (f"support_{k}", int(self.support[k]))]
        return out


def _errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("no errors given")
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise ValueError("errors must be finite and non-negative")
    return e


def localization_errors(pred, truth) -> np.ndarray:
    """Euclidean distance per row of two (N, 2) arrays."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return np.hypot(*(pred - truth).T)


def localization_metrics(errors) -> LocMetrics:
    e = _errors(errors)
    return LocMetrics(
        mean=float(e.mean()),
        std=float(e.std()),
        median=float(np.percentile(e, 50)),
        p80=float(np.percentile(e, 80)),
        max=float(e.max()),
        n=int(e.size),
    )


def confusion_matrix(pred, true, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    true = np.asarray(true, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {true.size} labels")
    for name, a in (("prediction", pred), ("label", true)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise ValueError(f"{name} outside 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> ClsMetrics:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    zero_pred = tuple(int(k) for k in np.flatnonzero(predicted == 0))
    if zero_pred:
        warnings.warn(f"classes {list(zero_pred)} have no predicted samples; precision set to 0",
                      UndefinedMetricWarning, stacklevel=3)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    total = cm.sum()
    return ClsMetrics(
        precision=precision, recall=recall, f1=f1, support=support,
        accuracy=float(tp.sum() / total) if total else 0.0,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=cm,
        zero_predicted=zero_pred,
    )


def classification_metrics(pred_classes, true_classes, num_classes: int) -> ClsMetrics:
    return metrics_from_confusion(confusion_matrix(pred_classes, true_classes, num_classes))


def error_cdf(errors) -> np.ndarray:
    """(N, 2) array of sorted errors and the fraction of samples at or below each."""
    e = np.sort(_errors(errors))
    return np.column_stack([e, np.arange(1, e.size + 1) / e.size])


def moving_average(a, window: int) -> np.ndarray:
    """Centred moving average along axis 0; the window shrinks at the edges."""
    a = np.asarray(a, dtype=np.float64)
    if window < 1:
        raise ValueError("smoothing window must be >= 1")
    n = len(a)
    half_lo = (window - 1) // 2
    half_hi = window - 1 - half_lo
    csum = np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
    idx = np.arange(n)
    lo = np.clip(idx - half_lo, 0, n)
    hi = np.clip(idx + half_hi + 1, 0, n)
    count = (hi - lo).reshape((-1,) + (1,) * (a.ndim - 1))
    return (csum[hi] - csum[lo]) / count


def trajectory_overlay(preds, truths, smoothing_window: int = 5, times=None) -> np.ndarray:
    """Columns t, x_true, y_true, x_pred, y_pred, x_smooth, y_smooth."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.ndim != 2 or preds.shape[1] != 2:
        raise ValueError(f"misaligned predictions {preds.shape} and truths {truths.shape}")
    t = np.arange(len(preds), dtype=np.float64) if times is None else np.asarray(times, dtype=np.float64)
    if len(t) != len(preds):
        raise ValueError("times and predictions differ in length")
    smooth = moving_average(preds, smoothing_window) if len(preds) else preds
    return np.column_stack([t, truths, preds, smooth])


# -- CSV exports -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def write_metrics_csv(path: str | Path, metrics: "LocMetrics | ClsMetrics") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in metrics.rows():
            w.writerow([name, _fmt(value)])


def write_cdf_csv(path: str | Path, cdf: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["error_m", "fraction"])
        for e, f in cdf:
            w.writerow([_fmt(e), _fmt(f)])


TRAJECTORY_COLUMNS = ("t", "x_true", "y_true", "x_pred", "y_pred", "x_smooth", "y_smooth")


def write_trajectory_csv(path: str | Path, overlay: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in overlay:
            w.writerow([_fmt(v) for v in row])


def write_confusion_csv(path: str | Path, cm: np.ndarray, names=None) -> None:
    names = list(names) if names is not None else [str(k) for k in range(len(cm))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, cm):
            w.writerow([name, *(int(v) for v in row)])


def read_csv_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
