"""Classification metrics for pass-probability scores."""

from __future__ import annotations

import numpy as np


def accuracy(probs, labels, threshold: float = 0.5) -> float:
    """Fraction correct when predicting pass for ``probs >= threshold``."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if probs.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    return float(np.mean((probs >= threshold).astype(int) == labels))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC points (fpr, tpr) at every distinct score threshold, starting at (0, 0)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {labels.shape}")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC/AUC undefined: labels contain a single class")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of each run of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return fpr, tpr


def auc_roc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; ties count half."""
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
