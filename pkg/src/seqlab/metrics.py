"""Classification, calibration and SSL diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    """Metric undefined for the given input."""


@dataclass(frozen=True)
class ClassificationReport:
    error_rate: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # rows = true class, cols = predicted
    class_wise_accuracy: list[float]


def _inputs(true_labels, prob_dists):
    y = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.atleast_2d(np.asarray(prob_dists, dtype=np.float64))
    if y.size == 0:
        raise MetricError("no samples")
    if y.size != p.shape[0]:
        raise MetricError(f"{y.size} labels for {p.shape[0]} predictions")
    return y, p


def confusion_matrix(true_labels, predicted, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true_labels), np.asarray(predicted)), 1)
    return cm


def classify_metrics(true_labels, prob_dists) -> ClassificationReport:
    """Error rate, macro precision/recall/F1, confusion and per-class accuracy.

    A zero denominator contributes 0 to the corresponding macro average.
    """
    y, p = _inputs(true_labels, prob_dists)
    L = p.shape[1]
    cm = confusion_matrix(y, np.argmax(p, axis=1), L)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return ClassificationReport(
        error_rate=1.0 - tp.sum() / y.size,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=cm,
        class_wise_accuracy=[float(r) for r in recall],
    )


def binary_auc(is_positive, scores) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    pos = np.asarray(is_positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positives and negatives")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(true_labels, prob_dists) -> float:
    """One-vs-rest rank AUC averaged over classes."""
    y, p = _inputs(true_labels, prob_dists)
    aucs = []
    for k in range(p.shape[1]):
        pos = y == k
        if not pos.any():
            raise MetricError(f"class {k} absent from true labels")
        if pos.all():
            raise MetricError(f"class {k} is the only class present")
        aucs.append(binary_auc(pos, p[:, k]))
    return float(np.mean(aucs))


@dataclass(frozen=True)
class CalibrationReport:
    bin_edges: np.ndarray
    bin_confidence: np.ndarray  # 0 for empty bins
    bin_accuracy: np.ndarray  # 0 for empty bins
    bin_counts: np.ndarray
    ece: float

    def to_csv(self) -> str:
        """Reliability-diagram rows: bin_low, bin_high, count, mean_conf, mean_acc."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count", "mean_conf", "mean_acc"])
        for m in range(len(self.bin_counts)):
            w.writerow([
                repr(float(self.bin_edges[m])),
                repr(float(self.bin_edges[m + 1])),
                int(self.bin_counts[m]),
                repr(float(self.bin_confidence[m])),
                repr(float(self.bin_accuracy[m])),
            ])
        return buf.getvalue()


def _edges(M: int) -> np.ndarray:
    # i / M is correctly rounded; linspace's i * (1 / M) can be one ulp off,
    # which would move a confidence sitting exactly on an edge to the next bin
    return np.arange(M + 1) / M


def calibration(true_labels, prob_dists, M: int = 15) -> CalibrationReport:
    """Equal-width confidence bins, right-closed: bin m holds (edge_m, edge_m+1];
    confidence 0 goes to the first bin."""
    if M < 1:
        raise MetricError(f"need at least one bin, got {M}")
    y, p = _inputs(true_labels, prob_dists)
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == y).astype(np.float64)
    edges = _edges(M)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, M - 1)
    counts = np.bincount(idx, minlength=M)
    conf_sum = np.bincount(idx, weights=conf, minlength=M)
    acc_sum = np.bincount(idx, weights=correct, minlength=M)
    safe = np.maximum(counts, 1)
    mean_conf = np.where(counts > 0, conf_sum / safe, 0.0)
    mean_acc = np.where(counts > 0, acc_sum / safe, 0.0)
    ece = float(np.sum(counts / y.size * np.abs(mean_acc - mean_conf)))
    return CalibrationReport(edges, mean_conf, mean_acc, counts, ece)


def confidence_histogram(prob_dists, M: int = 15) -> np.ndarray:
    """Sample counts per confidence bin (same binning as ``calibration``)."""
    p = np.atleast_2d(np.asarray(prob_dists, dtype=np.float64))
    edges = _edges(M)
    idx = np.clip(np.searchsorted(edges, p.max(axis=1), side="left") - 1, 0, M - 1)
    return np.bincount(idx, minlength=M)


@dataclass(frozen=True)
class SSLRatios:
    mask_ratio: float
    utilization: float
    pseudo_label_accuracy: float | None


# fraction of unlabeled samples that receive training signal, given the mask ratio
_UTILIZATION = {
    "SequenceMatch": lambda mask: 1.0,
    "FixMatch": lambda mask: 1.0 - mask,
    "UDA": lambda mask: 1.0 - mask,
    "LowConfOnly": lambda mask: mask,
    "SupervisedOnly": lambda mask: 0.0,
}


def ssl_ratios(weak_prob_dists, tau: float, true_unlabeled_labels=None, algorithm="FixMatch") -> SSLRatios:
    """Mask ratio (share of the batch with weak confidence below tau), data
    utilization for ``algorithm``, and pseudo-label accuracy over confident samples.

    Pseudo-label accuracy is None when no truths are given or nothing is confident.
    """
    p = np.atleast_2d(np.asarray(weak_prob_dists, dtype=np.float64))
    if p.shape[0] == 0:
        raise MetricError("empty batch")
    confident = p.max(axis=1) >= tau
    mask = float(np.mean(~confident))
    try:
        util = _UTILIZATION[algorithm](mask)
    except KeyError:
        raise MetricError(f"unknown algorithm {algorithm!r}") from None
    acc = None
    if true_unlabeled_labels is not None and confident.any():
        truth = np.asarray(true_unlabeled_labels)
        acc = float(np.mean(np.argmax(p[confident], axis=1) == truth[confident]))
    return SSLRatios(mask, util, acc)
