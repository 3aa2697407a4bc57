"""Confusion-matrix construction, derived rate suite, and rank-based AUC."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with lawful as the positive class."""

    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Rates in [0, 1]; a None entry means the ratio was undefined (0/0)."""

    acc: float | None
    pre: float | None
    tpr: float | None
    tnr: float | None
    fpr: float | None
    fnr: float | None
    auc: float | None = None

    def with_auc(self, auc: float) -> "MetricsReport":
        return replace(self, auc=auc)

    def as_dict(self) -> dict[str, float | None]:
        return {
            "ACC": self.acc,
            "PRE": self.pre,
            "TPR": self.tpr,
            "FNR": self.fnr,
            "FPR": self.fpr,
            "TNR": self.tnr,
            "AUC": self.auc,
        }


REPORT_ROWS = ("ACC", "PRE", "TPR", "FNR", "FPR", "TNR")


def format_percent(value: float | None) -> str:
    """Render a fraction as a percent with 2 decimals; undefined rates as '-'."""
    if value is None:
        return "-"
    return f"{100.0 * value:.2f}"


def confusion_matrix(actual, predicted) -> ConfusionMatrix:
    actual = np.asarray(actual)
    predicted = np.asarray(predicted)
    if actual.shape != predicted.shape:
        raise ValueError("actual and predicted labels differ in length")
    if actual.size == 0:
        raise ValueError("cannot build a confusion matrix from zero rows")
    pos = actual == 1
    pred_pos = predicted == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos & pred_pos)),
        fn=int(np.sum(pos & ~pred_pos)),
        fp=int(np.sum(~pos & pred_pos)),
        tn=int(np.sum(~pos & ~pred_pos)),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def derive_rates(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, precision, and the four class-conditional rates. AUC stays unset."""
    if cm.total == 0:
        raise ValueError("confusion matrix has no counts")
    return MetricsReport(
        acc=_ratio(cm.tp + cm.tn, cm.total),
        pre=_ratio(cm.tp, cm.tp + cm.fp),
        tpr=_ratio(cm.tp, cm.tp + cm.fn),
        tnr=_ratio(cm.tn, cm.tn + cm.fp),
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
        fnr=_ratio(cm.fn, cm.fn + cm.tp),
    )


def fractional_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their group."""
    x = np.asarray(x)
    n = x.size
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(n, dtype=np.float64)
    boundaries = np.flatnonzero(sx[1:] != sx[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def auc_roc(actual, scores) -> float:
    """Probability that a random positive outscores a random negative, ties as 1/2.

    Computed exactly from rank sums rather than by ROC integration.
    """
    actual = np.asarray(actual)
    scores = np.asarray(scores, dtype=np.float64)
    if actual.shape != scores.shape:
        raise ValueError("labels and scores differ in length")
    n_pos = int(np.sum(actual == 1))
    n_neg = actual.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = fractional_ranks(scores)
    rank_sum = float(np.sum(ranks[actual == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
