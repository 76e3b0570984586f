"""Evaluation metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties counted as one half.

    Computed from midranks, which equals exhaustive pair counting.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"roc_auc: {scores.size} scores for {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    if not np.all(np.isfinite(scores)):
        raise ValueError("roc_auc: non-finite score")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_bruteforce(scores, labels) -> float:
    """Reference pair counter: (#concordant + 0.5 * #ties) / #pairs."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    p = scores[labels == 1]
    n = scores[labels != 1]
    if p.size == 0 or n.size == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    diff = p[:, None] - n[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def accuracy(logits: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"accuracy: logits {logits.shape} do not match {labels.shape[0]} labels")
    if labels.size == 0:
        raise ValueError("accuracy: no labelled samples")
    return float(np.mean(np.argmax(logits, axis=1) == labels))
