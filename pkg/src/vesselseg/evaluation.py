"""Confusion metrics, ROC/AUC, the paired signed-rank test, and fold planning.

Vessel is the positive class and only pixels inside the FOV are scored.
AUC uses the threshold-sweep/trapezoid construction with tied scores
grouped, which equals the Mann-Whitney statistic with half credit for
ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RocCurve:
    """(fpr, tpr) points from (0,0) to (1,1) plus the area under them."""

    points: np.ndarray
    auc: float


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray  # fold id per item
    strata: tuple

    def fold_items(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)


def confusion(binary: np.ndarray, truth: np.ndarray, fov: np.ndarray) -> ConfusionCounts:
    """Count tp/fp/tn/fn over FOV pixels (vessel = positive class)."""
    if binary.shape != truth.shape or binary.shape != fov.shape:
        raise ValueError("prediction, truth, and FOV dimensions disagree")
    pred = binary[fov].astype(bool)
    ref = truth[fov].astype(bool)
    tp = int(np.count_nonzero(pred & ref))
    fp = int(np.count_nonzero(pred & ~ref))
    fn = int(np.count_nonzero(~pred & ref))
    tn = int(np.count_nonzero(~pred & ~ref))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def metrics(c: ConfusionCounts) -> tuple[float, float, float]:
    """(sensitivity, specificity, accuracy) from confusion counts."""
    if c.tp + c.fn == 0:
        raise ValueError("no vessel pixels in the reference; sensitivity undefined")
    if c.tn + c.fp == 0:
        raise ValueError("no background pixels in the reference; specificity undefined")
    sn = c.tp / (c.tp + c.fn)
    sp = c.tn / (c.tn + c.fp)
    acc = (c.tp + c.tn) / c.total
    return sn, sp, acc


def roc_auc(prob: np.ndarray, truth: np.ndarray, fov: np.ndarray) -> RocCurve:
    """ROC over FOV pixels by sweeping the distinct scores; trapezoidal AUC."""
    if prob.shape != truth.shape or prob.shape != fov.shape:
        raise ValueError("scores, truth, and FOV dimensions disagree")
    scores = np.asarray(prob, dtype=np.float64)[fov]
    ref = np.asarray(truth)[fov].astype(bool)
    npos = int(np.count_nonzero(ref))
    nneg = ref.size - npos
    if npos == 0 or nneg == 0:
        raise ValueError("ROC needs both classes inside the FOV")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    hits = ref[order].astype(np.float64)
    # close each group of tied scores before emitting a curve point
    last_of_group = np.flatnonzero(np.append(np.diff(s) != 0.0, True))
    tp = np.cumsum(hits)[last_of_group]
    fp = (last_of_group + 1.0) - tp
    tpr = np.concatenate([[0.0], tp / npos])
    fpr = np.concatenate([[0.0], fp / nneg])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(points=np.column_stack([fpr, tpr]), auc=auc)


EXACT_LIMIT = 20


def _signed_rank_reduce(pairs):
    """Drop zero differences and mid-rank the absolute values."""
    d = np.asarray([float(a) - float(b) for a, b in pairs])
    d = d[d != 0.0]
    if d.size == 0:
        raise ValueError("all paired differences are zero; test undefined")
    mag = np.abs(d)
    order = np.argsort(mag, kind="stable")
    ranks = np.empty(d.size)
    i = 0
    sorted_mag = mag[order]
    while i < d.size:
        j = i
        while j + 1 < d.size and sorted_mag[j + 1] == sorted_mag[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return d, ranks


def wilcoxon_signed_rank(pairs) -> tuple[float, float]:
    """Two-sided paired signed-rank test; returns (W = min(W+, W-), p).

    Exact p by enumerating the 2^n sign assignments (via the rank-sum
    distribution) for n <= 20, else a normal approximation with tie and
    continuity corrections.
    """
    d, ranks = _signed_rank_reduce(pairs)
    n = d.size
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_LIMIT:
        # mid-ranks are multiples of 1/2, so doubled ranks are exact ints
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
        counts[0] = 1.0
        top = 0
        for r in doubled:
            top += r
            counts[r : top + 1] += counts[0 : top - r + 1].copy()
        tail = counts[: int(np.rint(2.0 * w)) + 1].sum()
        p = min(1.0, 2.0 * tail / 2.0**n)
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
        z = (w - mean + 0.5) / math.sqrt(var)
        p = min(1.0, 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0)))
    return w, p


def stratified_kfold(labels, k: int, rng: np.random.Generator) -> FoldSplit:
    """Assign items to k folds, round-robin within each shuffled stratum.

    The fold pointer carries over between strata, so total fold sizes stay
    within one of each other even when strata sizes do not divide k.
    """
    labels = tuple(labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(labels):
        raise ValueError(f"cannot make {k} folds out of {len(labels)} items")
    assignments = np.empty(len(labels), dtype=np.int64)
    pointer = 0
    for stratum in sorted(set(labels)):
        items = np.flatnonzero([lab == stratum for lab in labels])
        items = items[rng.permutation(items.size)]
        for idx in items:
            assignments[idx] = pointer % k
            pointer += 1
    return FoldSplit(k=k, assignments=assignments, strata=labels)
