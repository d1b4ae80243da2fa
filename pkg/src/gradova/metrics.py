"""Threshold-free ranking metrics. OOD is the positive class throughout."""

from __future__ import annotations

import numpy as np


def _check(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and truth must be 1-D and of equal length")
    if truth.all() or not truth.any():
        raise ValueError("both IDD and OOD samples are required")
    return scores, truth


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    ranks = np.empty(len(values))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def auroc(scores, truth) -> float:
    """P(score_ood > score_idd) + 0.5 P(tie), via the rank-sum statistic."""
    scores, truth = _check(scores, truth)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    rank_sum = midranks(scores)[truth].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def aupr(scores, truth) -> float:
    """Area under the precision-recall staircase (no interpolation).

    Each distinct score, taken in descending order, is a threshold; the area
    is sum(precision * recall increment) over those thresholds.
    """
    scores, truth = _check(scores, truth)
    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], truth[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(t)[last_of_group]
    seen = (np.flatnonzero(last_of_group) + 1).astype(np.float64)
    precision = tp / seen
    recall = tp / t.sum()
    increments = np.diff(np.r_[0.0, recall])
    return float(np.sum(precision * increments))
