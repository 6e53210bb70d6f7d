"""Open-set evaluation metrics: macro-F1 over C+1 classes and AUROC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNKNOWN = -1


@dataclass
class Metrics:
    macro_f1: float
    auroc: float
    known_acc: float
    unknown_acc: float
    overall_acc: float


def macro_f1(preds: np.ndarray, truth: np.ndarray, c_plus_one: bool = True) -> float:
    """Unweighted mean of per-class F1 scores.

    With ``c_plus_one`` the UNKNOWN sentinel participates as its own class.
    Classes absent from both truth and predictions are skipped; a class that
    is only predicted (never true) contributes an F1 of 0.
    """
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.size == 0 or preds.shape != truth.shape:
        raise ValueError("predictions and truth must be equal-length and non-empty")
    if not c_plus_one:
        keep = truth != UNKNOWN
        classes = np.unique(np.concatenate([truth[keep], preds[keep & (preds != UNKNOWN)]]))
        preds, truth = preds[keep], truth[keep]
    else:
        classes = np.unique(np.concatenate([truth, preds]))
    f1s = []
    for c in classes:
        tp = int(((preds == c) & (truth == c)).sum())
        fp = int(((preds == c) & (truth != c)).sum())
        fn = int(((preds != c) & (truth == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def auroc(unknown_scores: np.ndarray, is_unknown: np.ndarray) -> float:
    """Probability a random unknown outranks a random known (ties count 1/2).

    Computed with the rank-sum form of the Mann-Whitney statistic, which
    equals exhaustive pair counting with half-credit for ties.
    """
    scores = np.asarray(unknown_scores, dtype=np.float64)
    flags = np.asarray(is_unknown, dtype=bool)
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both known and unknown examples are required")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(flags.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < flags.size:
        j = i
        while j + 1 < flags.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[flags].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
