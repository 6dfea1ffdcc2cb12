"""Ranking and per-class metrics shared with external trainers.

The average-precision routine is the reference implementation that remote
adapters must reproduce bit for bit on integer-score fixtures, so it sticks
to plain accumulation in rank order with no clever vectorized reductions.
"""
from __future__ import annotations

import warnings

import numpy as np

__all__ = [
    "compute_average_precision",
    "compute_map",
    "f1_at_threshold",
    "strata_indices",
    "compute_rare_f1",
    "compute_strata_f1",
    "compute_bacc",
]

DEFAULT_THRESHOLD = 0.5
STRATUM_FRACTION = 0.25


def compute_average_precision(scores, labels) -> float:
    """Mean of precision@rank over the positive ranks.

    Ranking is by descending score; ties keep their input order (stable sort).
    Raises on inputs without a single positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    if not labels.any():
        raise ValueError("average precision undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            total += hits / rank
    return total / hits


def compute_map(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean AP over classes (columns); classes without positives are skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("expected (samples, classes) score and label matrices")
    aps = []
    skipped = []
    for c in range(scores.shape[1]):
        if labels[:, c].any():
            aps.append(compute_average_precision(scores[:, c], labels[:, c]))
        else:
            skipped.append(c)
    if skipped:
        warnings.warn(f"classes without positives skipped from mAP: {skipped}")
    if not aps:
        raise ValueError("no class had positives; mAP undefined")
    return float(np.mean(aps))


def f1_at_threshold(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def strata_indices(class_freqs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split classes into (head, mid, tail) by frequency: top 25%, middle, bottom 25%.

    Ties resolve by class index (stable sort), so the split is deterministic.
    """
    freqs = np.asarray(class_freqs, dtype=np.float64)
    n = freqs.shape[0]
    if n < 2:
        raise ValueError("need at least two classes to stratify")
    k = max(1, int(round(STRATUM_FRACTION * n)))
    order = np.argsort(-freqs, kind="stable")
    return order[:k], order[k : n - k], order[n - k :]


def compute_rare_f1(scores, labels, class_freqs, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Mean per-class F1 over the bottom-25%-frequency classes."""
    _, _, tail = strata_indices(class_freqs)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    return float(np.mean([f1_at_threshold(scores[:, c], labels[:, c], threshold) for c in tail]))


def compute_strata_f1(
    scores, labels, class_freqs, threshold: float = DEFAULT_THRESHOLD
) -> dict[str, float]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    out = {}
    for name, idx in zip(("head", "mid", "tail"), strata_indices(class_freqs)):
        if idx.size == 0:
            out[name] = 0.0
        else:
            out[name] = float(
                np.mean([f1_at_threshold(scores[:, c], labels[:, c], threshold) for c in idx])
            )
    return out


def compute_bacc(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Balanced accuracy: mean per-class recall, classes without positives skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("expected (samples, classes) score and label matrices")
    recalls = []
    for c in range(scores.shape[1]):
        pos = labels[:, c]
        if pos.any():
            pred = scores[:, c] >= threshold
            recalls.append(float(np.sum(pred & pos)) / float(np.sum(pos)))
    if not recalls:
        raise ValueError("no class had positives; balanced accuracy undefined")
    return float(np.mean(recalls))
