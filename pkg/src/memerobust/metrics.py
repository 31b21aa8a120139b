"""Binary classification metrics and the absolute/relative robustness scores.

Label 1 (hateful) is the positive class throughout.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class BasicMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    balanced_accuracy: float
    # names of ratios whose denominator was zero (reported as 0)
    degenerate: frozenset = field(default_factory=frozenset)


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(labels, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise MetricError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    if pred.size == 0:
        raise MetricError("confusion of empty input")
    for name, arr in (("predictions", pred), ("labels", true)):
        if not np.isin(arr, (0, 1)).all():
            raise MetricError(f"{name} must be binary 0/1")
    return ConfusionCounts(
        tp=int(np.sum((pred == 1) & (true == 1))),
        tn=int(np.sum((pred == 0) & (true == 0))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
    )


def _ratio(num: int, den: int, name: str, degenerate: set) -> float:
    if den == 0:
        degenerate.add(name)
        return 0.0
    return num / den


def _harmonic(p: float, r: float, name: str, degenerate: set) -> float:
    if p + r == 0:
        degenerate.add(name)
        return 0.0
    return 2 * p * r / (p + r)


def basic_metrics(c: ConfusionCounts) -> BasicMetrics:
    """Accuracy, precision, recall and F1 for the positive class, plus macro
    variants that average the same formulas with each class taken as positive.
    """
    if c.total == 0:
        raise MetricError("metrics of empty counts")
    deg: set = set()
    accuracy = (c.tp + c.tn) / c.total
    precision = _ratio(c.tp, c.tp + c.fp, "precision", deg)
    recall = _ratio(c.tp, c.tp + c.fn, "recall", deg)
    f1 = _harmonic(precision, recall, "f1", deg)
    # class 0 as positive: its TP is tn, its FP is fn, its FN is fp
    precision_neg = _ratio(c.tn, c.tn + c.fn, "precision_neg", deg)
    recall_neg = _ratio(c.tn, c.tn + c.fp, "recall_neg", deg)
    f1_neg = _harmonic(precision_neg, recall_neg, "f1_neg", deg)
    return BasicMetrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        precision_macro=(precision + precision_neg) / 2,
        recall_macro=(recall + recall_neg) / 2,
        f1_macro=(f1 + f1_neg) / 2,
        balanced_accuracy=(recall + recall_neg) / 2,
        degenerate=frozenset(deg),
    )


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals the fraction of (positive, negative) pairs in which the positive
    scores higher, with ties counted one half.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape != y.shape:
        raise MetricError(f"length mismatch: {s.size} scores vs {y.size} labels")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != y.size:
        raise MetricError("labels must be binary 0/1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    if not np.isfinite(s).all():
        raise MetricError("scores must be finite")
    ranks = rankdata(s)  # average ranks resolve ties as 1/2
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def abs_robustness(clean: float, perturbed: float) -> float:
    """1 - (clean - perturbed) / 100.

    Accuracies stay on the [0, 1] scale while the drop is still divided by
    100; this is what yields the near-1 magnitudes of the published tables.
    """
    return 1.0 - (clean - perturbed) / 100.0


def rel_robustness(clean: float, perturbed: float) -> float:
    """1 - (clean - perturbed) / clean; above 1 when noise helps."""
    if clean == 0:
        raise MetricError("relative robustness undefined for a zero clean score")
    return 1.0 - (clean - perturbed) / clean


@dataclass
class MetricsRow:
    condition: str
    accuracy: float
    auroc: float
    f1: float
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1_macro: Optional[float] = None
    balanced_accuracy: Optional[float] = None
    abs_robust: Optional[float] = None
    rel_robust: Optional[float] = None

    def with_robustness(self, clean: "MetricsRow") -> "MetricsRow":
        self.abs_robust = abs_robustness(clean.accuracy, self.accuracy)
        self.rel_robust = rel_robustness(clean.accuracy, self.accuracy)
        return self

    @property
    def table_f1(self) -> float:
        """F1 as printed in the grid tables (macro-averaged when known)."""
        return self.f1 if self.f1_macro is None else self.f1_macro


def compute_row(
    condition: str,
    predictions: Sequence[int],
    scores: Sequence[float],
    labels: Sequence[int],
    clean: Optional[MetricsRow] = None,
) -> MetricsRow:
    m = basic_metrics(confusion(predictions, labels))
    row = MetricsRow(
        condition=condition,
        accuracy=m.accuracy,
        auroc=auroc(scores, labels),
        f1=m.f1,
        precision=m.precision,
        recall=m.recall,
        f1_macro=m.f1_macro,
        balanced_accuracy=m.balanced_accuracy,
    )
    if clean is not None:
        row.with_robustness(clean)
    return row


CSV_COLUMNS = ("condition", "accuracy", "auroc", "f1", "precision", "recall", "abs_robust", "rel_robust")


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.5f}"


def rows_to_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.condition] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[1:]])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[MetricsRow]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {c: (float(rec[c]) if rec[c] != "" else None) for c in CSV_COLUMNS[1:]}
        out.append(MetricsRow(condition=rec["condition"], **kw))
    return out


def row_to_dict(row: MetricsRow) -> dict:
    return {f.name: getattr(row, f.name) for f in fields(row)}


def row_from_dict(d: dict) -> MetricsRow:
    return MetricsRow(**d)
