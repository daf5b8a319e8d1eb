"""Discrimination, stability and degradation metrics.

AUC follows the Mann-Whitney convention: the probability that a random bad
outscores a random good, with ties counted as one half. It is computed
exactly from average ranks, so on small inputs it matches a brute-force
count over all good/bad pairs bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RocResult:
    auc: float
    n_pos: int
    n_neg: int
    tied_pairs: int
    note: str = "ties counted as half-concordant"


def auc(scores: Sequence[float], labels: Sequence[int]) -> RocResult:
    """Area under the ROC curve, exact under ties.

    Higher score must mean higher predicted probability of bad (label 1).

    Parameters
    ----------
    scores : array-like of float
    labels : array-like of {0, 1}

    Returns
    -------
    RocResult
        AUC plus class counts and the exact number of tied pairs.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.size != y.size:
        raise EvaluationError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("both classes required to compute AUC")
    ranks = rankdata(s, method="average")
    rank_sum = float(ranks[y == 1].sum())
    numerator = rank_sum - n_pos * (n_pos + 1) / 2.0
    value = numerator / (n_pos * n_neg)

    tied = 0
    order = np.argsort(s, kind="stable")
    ss, yy = s[order], y[order]
    i = 0
    while i < ss.size:
        j = i
        while j < ss.size and ss[j] == ss[i]:
            j += 1
        group_pos = int((yy[i:j] == 1).sum())
        tied += group_pos * (j - i - group_pos)
        i = j
    return RocResult(auc=value, n_pos=n_pos, n_neg=n_neg, tied_pairs=tied)


@dataclass(frozen=True)
class CvResult:
    k: int
    fold_aucs: tuple[float, ...]
    mean: float
    std: float
    seed: int


def stratified_folds(labels: Sequence[int], k: int, seed: int) -> list[np.ndarray]:
    """Deterministic stratified fold assignment.

    Shuffles each class with a Philox stream and deals records round-robin,
    so fold class proportions match the sample within one record. Returns
    one validation index array per fold; together they partition the input.
    """
    y = np.asarray(labels, dtype=int)
    if k < 2:
        raise EvaluationError("k must be >= 2")
    counts = [int((y == c).sum()) for c in (0, 1)]
    if k > min(c for c in counts if c > 0):
        raise EvaluationError(f"k={k} exceeds the smaller class count {min(counts)}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for pos, record in enumerate(idx):
            folds[pos % k].append(int(record))
    return [np.array(sorted(f), dtype=int) for f in folds]


def kfold_cv(
    records: Sequence,
    labels: Sequence[int],
    k: int,
    trainer: Callable,
    seed: int = 0,
) -> CvResult:
    """Stratified k-fold cross-validated AUC.

    ``trainer(train_records, train_labels)`` must return a scorer object
    exposing ``score(records) -> P(bad)``; it is called once per fold, so
    any binning or encoding it performs is refit inside the fold and never
    sees validation rows.
    """
    y = np.asarray(labels, dtype=int)
    folds = stratified_folds(y, k, seed)
    fold_aucs: list[float] = []
    all_idx = np.arange(y.size)
    for val_idx in folds:
        train_idx = np.setdiff1d(all_idx, val_idx)
        model = trainer([records[i] for i in train_idx], y[train_idx])
        scores = np.asarray(model.score([records[i] for i in val_idx]))
        fold_aucs.append(auc(scores, y[val_idx]).auc)
    arr = np.array(fold_aucs)
    return CvResult(
        k=k,
        fold_aucs=tuple(fold_aucs),
        mean=float(arr.mean()),
        std=float(arr.std()),
        seed=seed,
    )


def psi(
    baseline: Sequence[float],
    comparison: Sequence[float],
    epsilon: float = 1e-4,
) -> float:
    """Population stability index between two binned distributions.

    PSI = sum over bins of (p - q) * ln(p / q), with both proportion
    vectors floored at ``epsilon`` so empty bins stay finite; the floored
    form keeps every summand non-negative and the index symmetric.
    """
    p = np.asarray(baseline, dtype=float)
    q = np.asarray(comparison, dtype=float)
    if p.shape != q.shape:
        raise EvaluationError("bin structures differ")
    if p.size == 0:
        raise EvaluationError("empty distributions")
    for name, v in (("baseline", p), ("comparison", q)):
        if (v < 0).any():
            raise EvaluationError(f"{name} has negative proportions")
        if not math.isclose(float(v.sum()), 1.0, abs_tol=1e-6):
            raise EvaluationError(f"{name} proportions must sum to 1")
    pf = np.maximum(p, epsilon)
    qf = np.maximum(q, epsilon)
    return float(np.sum((pf - qf) * np.log(pf / qf)))


@dataclass(frozen=True)
class PsiReport:
    """Per-characteristic PSI between a baseline and a comparison window."""

    values: dict[str, float]
    baseline_label: str = "baseline"
    comparison_label: str = "comparison"

    def sorted_items(self) -> list[tuple[str, float]]:
        return sorted(self.values.items(), key=lambda kv: (-kv[1], kv[0]))


def degradation(auc_test: float, auc_holdout: float) -> float:
    """AUC drop from test to holdout, in percentage points.

    Computed as (auc_test - auc_holdout) * 100 and rounded to 12 decimals
    to absorb binary-representation dust, so e.g. 0.7320 vs 0.7227 gives
    exactly 0.93.
    """
    for v in (auc_test, auc_holdout):
        if not 0.0 <= v <= 1.0:
            raise EvaluationError("AUC values must lie in [0, 1]")
    return round((auc_test - auc_holdout) * 100.0, 12)
