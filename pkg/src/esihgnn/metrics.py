"""Weighted-average and micro-averaged F1 from confusion counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError

METRIC_KINDS = ("weighted_f1", "micro_f1")


@dataclass
class MetricSpec:
    kind: str = "weighted_f1"
    excluded_labels: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise UsageError(f"unknown metric {self.kind!r}; expected one of {METRIC_KINDS}")
        self.excluded_labels = frozenset(int(x) for x in self.excluded_labels)

    def validate(self, num_classes):
        bad = [c for c in self.excluded_labels if not 0 <= c < num_classes]
        if bad:
            raise UsageError(f"excluded labels {bad} outside 0..{num_classes - 1}")


def confusion_matrix(y_true, y_pred, num_classes):
    """counts[t, p] = number of utterances with true label t predicted as p."""
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return counts


def _per_class(counts):
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    return tp, fp, fn


def weighted_f1(counts, excluded=()):
    """Class F1 scores averaged with weights support_c / total over included classes."""
    tp, fp, fn = _per_class(counts)
    support = counts.sum(axis=1).astype(np.float64)
    keep = np.ones(len(tp), dtype=bool)
    keep[list(excluded)] = False
    total = support[keep].sum()
    if total == 0:
        raise DomainError("no evaluable utterances (every true label is excluded or the set is empty)")
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float((f1[keep] * support[keep]).sum() / total)


def micro_f1(counts, excluded=()):
    """F1 from counts pooled over the included classes.

    Without exclusions this equals accuracy. With exclusions, predictions of
    an excluded class are neither true nor false positives, and utterances of
    an excluded class predicted as an included one count as false positives.
    """
    tp, fp, fn = _per_class(counts)
    keep = np.ones(len(tp), dtype=bool)
    keep[list(excluded)] = False
    if counts.sum(axis=1)[keep].sum() == 0:
        raise DomainError("no evaluable utterances (every true label is excluded or the set is empty)")
    TP, FP, FN = tp[keep].sum(), fp[keep].sum(), fn[keep].sum()
    denom = 2 * TP + FP + FN
    return float(2 * TP / denom) if denom > 0 else 0.0


def score(y_true, y_pred, num_classes, spec):
    counts = confusion_matrix(y_true, y_pred, num_classes)
    if spec.kind == "weighted_f1":
        return weighted_f1(counts, spec.excluded_labels)
    return micro_f1(counts, spec.excluded_labels)
