"""Ranking metrics for binary scores."""
from typing import Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from src.errors import MetricUndefinedError
from src.validation.input_validator import require_binary_labels


def _prepare(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    y_score = np.asarray(scores, dtype=np.float64).reshape(-1)
    y_true = require_binary_labels(labels).reshape(-1)
    if y_score.shape != y_true.shape:
        raise ValueError(f"{y_score.size} scores for {y_true.size} labels")
    if not np.isfinite(y_score).all():
        raise ValueError("scores contain NaN or Inf values")
    return y_score, y_true


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties counting one half.

    Computed from average ranks (Mann-Whitney U).
    """
    y_score, y_true = _prepare(scores, labels)
    n_pos = int(y_true.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC needs both positive and negative labels")
    ranks = rankdata(y_score, method="average")
    u = ranks[y_true == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ranking_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties kept in original index order."""
    return np.lexsort((np.arange(scores.size), -scores))


def prauc(scores, labels) -> float:
    """Average precision: mean over positives of the precision at each positive's rank."""
    y_score, y_true = _prepare(scores, labels)
    if y_true.sum() == 0:
        raise MetricUndefinedError("PRAUC needs at least one positive label")
    ordered = y_true[ranking_order(y_score)]
    hits = np.cumsum(ordered)
    ranks = np.arange(1, ordered.size + 1)
    return float(np.mean(hits[ordered == 1] / ranks[ordered == 1]))


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (ddof=1); a single value has std 0."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_std of an empty sequence")
    if (arr == arr[0]).all():
        return float(arr[0]), 0.0
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std
