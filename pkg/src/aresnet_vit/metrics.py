"""Confusion-matrix metrics, ROC/AUC, and the serialized metrics report.

Malignant (label 1) is the positive class; a probability >= threshold is a
positive prediction (ties go to positive).  AUC is the Mann-Whitney
statistic -- the fraction of (positive, negative) score pairs ranked
correctly, ties counting one half -- which equals the trapezoidal area
under the ROC curve when there are no ties.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError

CSV_HEADER = ["method", "acc", "tpr", "tnr", "auc"]


@dataclass
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ContractError(f"{scores.shape} scores for {labels.shape} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise ContractError("labels must be 0 or 1")
    predicted = scores >= threshold
    actual = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise UndefinedMetricError("accuracy undefined on an empty evaluation")
    return (counts.tp + counts.tn) / counts.total


def true_positive_rate(counts: ConfusionCounts) -> float:
    if counts.tp + counts.fn == 0:
        raise UndefinedMetricError("TPR undefined without positive labels")
    return counts.tp / (counts.tp + counts.fn)


def true_negative_rate(counts: ConfusionCounts) -> float:
    if counts.tn + counts.fp == 0:
        raise UndefinedMetricError("TNR undefined without negative labels")
    return counts.tn / (counts.tn + counts.fp)


def roc_auc(scores, labels) -> tuple:
    """Returns (auc, roc points); points sweep every distinct threshold from
    (0,0) to (1,1) in (fpr, tpr) coordinates."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined unless both classes are present")

    # Mann-Whitney via midranks (ties count one half)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(np.sum(ranks[labels == 1]))
    auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # ROC points from sweeping all distinct score thresholds, descending
    points = [(0.0, 0.0)]
    tp = fp = 0
    desc = np.argsort(-scores, kind="mergesort")
    k = 0
    while k < len(scores):
        thr = scores[desc[k]]
        while k < len(scores) and scores[desc[k]] == thr:
            if labels[desc[k]] == 1:
                tp += 1
            else:
                fp += 1
            k += 1
        points.append((fp / n_neg, tp / n_pos))
    return auc, points


@dataclass
class MetricsReport:
    """One evaluation run: confusion counts, the four headline metrics, and
    the ROC polyline.  Metrics whose denominator is zero are stored as None."""

    method: str
    counts: ConfusionCounts
    acc: float | None
    tpr: float | None
    tnr: float | None
    auc: float | None
    roc: list = field(default_factory=list)
    threshold: float = 0.5

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "counts": {"tp": self.counts.tp, "tn": self.counts.tn,
                       "fp": self.counts.fp, "fn": self.counts.fn},
            "acc": self.acc,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "auc": self.auc,
            "threshold": self.threshold,
            "roc": [[fpr, tpr] for fpr, tpr in self.roc],
        }

    def to_csv_row(self) -> list:
        def fmt(x):
            return "" if x is None else f"{x:.4f}"

        return [self.method, fmt(self.acc), fmt(self.tpr), fmt(self.tnr), fmt(self.auc)]


def evaluate_scores(method: str, scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Assemble a full report from model scores; undefined metrics become None."""
    counts = confusion(scores, labels, threshold)

    def guarded(fn, *args):
        try:
            return fn(*args)
        except UndefinedMetricError:
            return None

    auc_points = guarded(roc_auc, scores, labels)
    return MetricsReport(
        method=method,
        counts=counts,
        acc=guarded(accuracy, counts),
        tpr=guarded(true_positive_rate, counts),
        tnr=guarded(true_negative_rate, counts),
        auc=auc_points[0] if auc_points else None,
        roc=auc_points[1] if auc_points else [],
        threshold=threshold,
    )


def write_report_json(path, report: MetricsReport):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports_csv(path, reports, with_auc: bool = True):
    """One CSV row per report in declared order; header matches the report
    tables (method,acc,tpr,tnr[,auc])."""
    header = CSV_HEADER if with_auc else CSV_HEADER[:-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rep in reports:
            row = rep.to_csv_row()
            writer.writerow(row if with_auc else row[:-1])
