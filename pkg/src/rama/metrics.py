"""Evaluation metrics and cross-validation splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank sum; ties get average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean((s >= threshold).astype(int) == y))


@dataclass(frozen=True)
class Fold:
    train: list
    val: list


def stratified_kfold(labels, k: int, seed: int = 0, ids=None) -> list[Fold]:
    """Shuffle each class by ``seed`` and deal members round-robin over ``k`` folds.

    Dealing continues across classes, so fold sizes also differ by at most one.
    """
    y = np.asarray(labels).astype(int)
    n = y.size
    if ids is None:
        ids = list(range(n))
    if len(ids) != n:
        raise DataError("ids and labels differ in length")
    if not 2 <= k <= n:
        raise DataError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(k)]
    slot = 0
    for cls in (1, 0):
        members = np.flatnonzero(y == cls)
        for i in rng.permutation(members):
            buckets[slot % k].append(int(i))
            slot += 1
    folds = []
    for f in range(k):
        val = sorted(buckets[f])
        train = sorted(i for g in range(k) if g != f for i in buckets[g])
        folds.append(Fold([ids[i] for i in train], [ids[i] for i in val]))
    return folds
