"""Top-1 accuracy, average precision / mAP, and confusion matrices.

Tie handling is fixed so results are deterministic: the ranking for AP is
a stable descending sort (ties keep original order) and argmax ties break
toward the lowest class id. Segmentation metrics treat each frame as one
item; clip metrics treat each clip as one item. Classes with no positive
item are excluded from the mAP mean and reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PredictionSet:
    """Per-item score vectors plus ground-truth class ids."""

    scores: np.ndarray  # (items, classes)
    truths: np.ndarray  # (items,)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.truths = np.asarray(self.truths, dtype=np.int64)
        if self.scores.ndim != 2:
            raise ValueError(f"scores must be 2-d, got {self.scores.shape}")
        if self.truths.shape != (self.scores.shape[0],):
            raise ValueError(
                f"{self.truths.shape[0] if self.truths.ndim else 0} truths for "
                f"{self.scores.shape[0]} score rows"
            )
        k = self.scores.shape[1]
        if self.truths.size and (self.truths.min() < 0 or self.truths.max() >= k):
            raise ValueError(f"ground-truth class outside [0, {k})")

    @property
    def num_items(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def argmax(self) -> np.ndarray:
        # np.argmax already yields the first (lowest) index on ties
        return self.scores.argmax(axis=1)


def top1_accuracy(preds: PredictionSet) -> float:
    if preds.num_items == 0:
        raise ValueError("top1_accuracy of an empty prediction set")
    return float(np.mean(preds.argmax() == preds.truths))


def average_precision(scores, relevance) -> float:
    """AP under a stable descending ranking of the scores.

    AP = mean over relevant items of (precision at that item's rank).
    """
    scores = np.asarray(scores, dtype=float)
    rel = np.asarray(relevance).astype(bool)
    if scores.shape != rel.shape or scores.ndim != 1:
        raise ValueError("scores and relevance must be equal-length vectors")
    if not rel.any():
        raise ValueError("average_precision needs at least one relevant item")
    order = np.argsort(-scores, kind="stable")
    ranked = rel[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(scores) + 1)
    return float(np.mean(hits[ranked] / ranks[ranked]))


def mean_ap(preds: PredictionSet) -> tuple:
    """One-vs-rest mAP over all items.

    Returns (map, per_class_ap, excluded) where ``per_class_ap`` holds NaN
    for classes without positives and ``excluded`` lists those class ids.
    """
    if preds.num_items == 0:
        raise ValueError("mean_ap of an empty prediction set")
    per_class = np.full(preds.num_classes, np.nan)
    excluded = []
    for k in range(preds.num_classes):
        rel = preds.truths == k
        if rel.any():
            per_class[k] = average_precision(preds.scores[:, k], rel)
        else:
            excluded.append(k)
    present = ~np.isnan(per_class)
    return float(per_class[present].mean()), per_class, excluded


def confusion_matrix(preds: PredictionSet) -> np.ndarray:
    """Counts with rows = ground truth, columns = argmax prediction."""
    if preds.num_items == 0:
        raise ValueError("confusion_matrix of an empty prediction set")
    k = preds.num_classes
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (preds.truths, preds.argmax()), 1)
    return out


def normalize_confusion(counts: np.ndarray) -> np.ndarray:
    """Row-normalized confusion; rows with zero support stay all-zero."""
    counts = np.asarray(counts, dtype=float)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def metrics_report(preds: PredictionSet) -> dict:
    """The standard metrics bundle emitted by evaluation commands."""
    m, per_class, excluded = mean_ap(preds)
    confusion = confusion_matrix(preds)
    return {
        "top1": top1_accuracy(preds),
        "map": m,
        "per_class_ap": [None if np.isnan(v) else float(v) for v in per_class],
        "excluded_classes": excluded,
        "confusion": confusion.tolist(),
        "num_items": preds.num_items,
    }
