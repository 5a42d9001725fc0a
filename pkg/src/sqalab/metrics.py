"""Evaluation metrics: MSE, Pearson/Spearman correlation, top-k accuracy."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput, InvalidInput


def mse(predictions, targets) -> float:
    """Mean squared residual."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size == 0 or p.shape != t.shape:
        raise InvalidInput("predictions and targets must be non-empty and equal-length")
    return float(np.mean((p - t) ** 2))


def pcc(predictions, targets) -> float:
    """Pearson correlation coefficient, 64-bit accumulation.

    Raises DegenerateInput when either series has zero variance; a
    silent 0 there would mask pipeline bugs.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size < 2 or p.shape != t.shape:
        raise InvalidInput("PCC needs two equal-length series of >= 2 values")
    dp = p - p.mean()
    dt = t - t.mean()
    sp = np.sqrt(np.sum(dp * dp))
    st = np.sqrt(np.sum(dt * dt))
    if sp == 0.0 or st == 0.0:
        raise DegenerateInput("PCC undefined for a zero-variance series")
    return float(np.sum(dp * dt) / (sp * st))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; ties get the mean of the positions they occupy."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(predictions, targets) -> float:
    """Spearman rank correlation: PCC of average ranks (exact under ties)."""
    return pcc(average_ranks(predictions), average_ranks(targets))


def top_k_accuracy(ranked_predictions, truth, k: int) -> float:
    """Fraction of items whose true class is in the first k ranked classes."""
    if k < 1:
        raise InvalidInput("k must be >= 1")
    if len(ranked_predictions) != len(truth) or len(truth) == 0:
        raise InvalidInput("rankings and truth must be non-empty and equal-length")
    hits = sum(1 for ranking, label in zip(ranked_predictions, truth)
               if label in list(ranking)[:k])
    return hits / len(truth)
