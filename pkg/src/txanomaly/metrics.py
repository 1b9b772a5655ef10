"""Confusion-matrix rates, ROC curve and AUC.

A rate whose denominator is zero is ``None`` (rendered as ``"undefined"``),
never a silent 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn}


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf for the (0, 0) point

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
        return buf.getvalue()


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return a.astype(np.int8)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = _binary(y_true, "y_true")
    y_pred = _binary(y_pred, "y_pred")
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} labels vs {y_pred.size} predictions")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    return ConfusionMatrix(tp, fn, fp, tn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def rates(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Accuracy, TPR (sensitivity), TNR (specificity) and FPR."""
    return {
        "accuracy": _ratio(cm.tp + cm.tn, cm.total),
        "tpr": _ratio(cm.tp, cm.tp + cm.fn),
        "tnr": _ratio(cm.tn, cm.tn + cm.fp),
        "fpr": _ratio(cm.fp, cm.fp + cm.tn),
    }


def roc_auc(y_true, scores) -> tuple[RocCurve, float]:
    """ROC curve over distinct scores (descending) and its trapezoidal area.

    Equal scores form a single step, which is the same as giving tied
    positive/negative pairs half credit.
    """
    y = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # last position of every distinct score
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tps = np.cumsum(y_sorted)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s_sorted[ends]]
    # integer trapezoid: sum (fp_i - fp_{i-1}) * (tp_i + tp_{i-1}) / (2 P N)
    tp_c = np.r_[0, tps].astype(np.float64)
    fp_c = np.r_[0, fps].astype(np.float64)
    area = float(np.sum(np.diff(fp_c) * (tp_c[1:] + tp_c[:-1])) / (2.0 * n_pos * n_neg))
    return RocCurve(fpr, tpr, thresholds), area


@dataclass(frozen=True)
class EvaluationReport:
    confusion: ConfusionMatrix
    accuracy: float | None
    tpr: float | None
    tnr: float | None
    fpr: float | None
    auc: float | None
    roc: RocCurve | None = None

    def row(self) -> dict[str, object]:
        """Flat JSON-ready record; undefined rates become ``"undefined"``."""
        out: dict[str, object] = {}
        for key in ("accuracy", "tpr", "fpr", "tnr", "auc"):
            v = getattr(self, key)
            out[key] = UNDEFINED if v is None else v
        out.update(self.confusion.as_dict())
        return out


def evaluate(y_true, scores, y_pred=None, threshold: float = 0.5) -> EvaluationReport:
    """Rates of the hard labels plus ROC-AUC over the raw scores.

    Hard labels default to ``score > threshold``.
    """
    y = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if y_pred is None:
        y_pred = (s > threshold).astype(np.int8)
    cm = confusion(y, y_pred)
    r = rates(cm)
    roc, auc = (None, None)
    if 0 < y.sum() < y.size:
        roc, auc = roc_auc(y, s)
    return EvaluationReport(cm, r["accuracy"], r["tpr"], r["tnr"], r["fpr"], auc, roc)


def format_rate(v) -> str:
    return UNDEFINED if v is None or v == UNDEFINED else repr(float(v))


def metrics_grid_csv(rows: Iterable[dict], metric: str, samplers: Sequence[str], models: Sequence[str]) -> str:
    """Sampler-by-model table of one metric, shaped like a comparison table."""
    table = {(r["sampler"], r["model"]): r[metric] for r in rows}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *samplers])
    for m in models:
        w.writerow([m, *(format_rate(table.get((s, m))) if (s, m) in table else "" for s in samplers)])
    return buf.getvalue()


def metrics_json(rows: Sequence[dict]) -> str:
    return json.dumps(list(rows), indent=2, sort_keys=True)
