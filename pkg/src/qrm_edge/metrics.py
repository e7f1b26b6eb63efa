"""Macro-averaged classification metrics, precision-recall curves and
time-weighted F1.

Any 0/0 ratio evaluates to 0. Average precision is the step sum
``sum((R_n - R_{n-1}) * P_n)`` over a descending threshold sweep, where tied
confidences move together as one threshold.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .domain import ClassCounts, ConfusionMatrix, DomainError, PredictionRecord

log = logging.getLogger(__name__)

RECALL_GRID = np.linspace(0.0, 1.0, 101)


class MetricsError(DomainError):
    pass


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def class_counts(cm: ConfusionMatrix) -> list[ClassCounts]:
    counts = cm.counts
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    return [ClassCounts(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]


def precision_recall_f1(c: ClassCounts) -> tuple[float, float, float]:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return precision, recall, _ratio(2 * precision * recall, precision + recall)


@dataclass(frozen=True)
class MacroMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    per_class: tuple[tuple[float, float, float], ...] = ()


def macro_metrics(cm: ConfusionMatrix) -> MacroMetrics:
    """Unweighted class means of precision, recall and F1, plus accuracy.

    Raises:
        MetricsError: if the matrix holds no counts (accuracy undefined).
    """
    total = cm.total
    if total == 0:
        raise MetricsError("accuracy is undefined for an empty confusion matrix")
    per_class = tuple(precision_recall_f1(c) for c in class_counts(cm))
    k = len(per_class)
    return MacroMetrics(
        precision=sum(p for p, _, _ in per_class) / k,
        recall=sum(r for _, r, _ in per_class) / k,
        f1=sum(f for _, _, f in per_class) / k,
        accuracy=int(np.trace(cm.counts)) / total,
        per_class=per_class,
    )


@dataclass(frozen=True)
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return [(float(r), float(p)) for r, p in zip(self.recall, self.precision)]

    def interpolate(self, grid: np.ndarray = RECALL_GRID) -> np.ndarray:
        """Interpolated precision: best precision reached at recall >= r, else 0."""
        envelope = np.maximum.accumulate(self.precision[::-1])[::-1]
        idx = np.searchsorted(self.recall, grid, side="left")
        out = np.zeros(len(grid))
        valid = idx < len(self.recall)
        out[valid] = envelope[idx[valid]]
        return out


def _scores(records: Sequence[PredictionRecord], k: int) -> tuple[np.ndarray, np.ndarray]:
    scores = np.fromiter((r.confidences[k] for r in records), dtype=float, count=len(records))
    positive = np.fromiter((r.true_class == k for r in records), dtype=bool, count=len(records))
    return scores, positive


def pr_curve(records: Sequence[PredictionRecord], k: int) -> tuple[PrCurve, float]:
    """One-vs-rest PR curve for class ``k`` and its average precision.

    Raises:
        MetricsError: if no record has true class ``k``.
    """
    scores, positive = _scores(records, k)
    n_pos = int(positive.sum())
    if n_pos == 0:
        raise MetricsError(f"class {k} has no positive examples")
    order = np.argsort(-scores, kind="stable")
    scores, positive = scores[order], positive[order]
    tp = np.cumsum(positive)
    fp = np.cumsum(~positive)
    # last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(scores)), len(scores) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    ap = float(np.sum(np.diff(recall, prepend=0.0) * precision))
    return PrCurve(recall, precision), ap


@dataclass
class MacroPr:
    grid: np.ndarray
    precision: np.ndarray
    macro_auc: float
    per_class_ap: dict[int, float]
    per_class_precision: dict[int, np.ndarray]
    excluded: list[int] = field(default_factory=list)


def macro_pr(records: Sequence[PredictionRecord], grid: np.ndarray = RECALL_GRID) -> MacroPr:
    """Macro-average PR curve on a shared recall grid.

    Classes without positives are skipped with a warning and listed in
    ``excluded``; ``macro_auc`` is the mean per-class average precision.
    """
    if not records:
        raise MetricsError("no prediction records")
    n_classes = len(records[0].confidences)
    per_ap: dict[int, float] = {}
    per_prec: dict[int, np.ndarray] = {}
    excluded = []
    for k in range(n_classes):
        try:
            curve, ap = pr_curve(records, k)
        except MetricsError:
            log.warning("class %d has no positive examples; excluded from macro PR", k)
            excluded.append(k)
            continue
        per_ap[k] = ap
        per_prec[k] = curve.interpolate(grid)
    if not per_ap:
        raise MetricsError("no class has positive examples")
    precision = np.mean(list(per_prec.values()), axis=0)
    macro_auc = sum(per_ap.values()) / len(per_ap)
    return MacroPr(grid, precision, macro_auc, per_ap, per_prec, excluded)


def pr_csv(result: MacroPr, labels: Sequence[str] | None = None) -> str:
    """CSV text with header ``class,recall,precision``; ``macro`` rows last."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "recall", "precision"])
    for k, prec in result.per_class_precision.items():
        name = labels[k] if labels else str(k)
        writer.writerows((name, f"{r:.2f}", f"{p:.6f}") for r, p in zip(result.grid, prec))
    writer.writerows(("macro", f"{r:.2f}", f"{p:.6f}") for r, p in zip(result.grid, result.precision))
    return buf.getvalue()


@dataclass(frozen=True)
class TimedSegment:
    duration_s: float
    f1_pct: float

    def __post_init__(self):
        if self.duration_s < 0:
            raise MetricsError(f"negative segment duration {self.duration_s}")


def time_weighted_f1(segments: Iterable[TimedSegment]) -> float:
    segments = list(segments)
    total = sum(s.duration_s for s in segments)
    if total <= 0:
        raise MetricsError("time-weighted F1 needs a positive total duration")
    return sum(s.duration_s * s.f1_pct for s in segments) / total
