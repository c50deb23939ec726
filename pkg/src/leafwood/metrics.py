"""Imbalance-aware evaluation metrics.

Convention: the positive class is LEAF (label 0), so recall and precision
describe leaf retrieval and specificity is the wood recall, the quantity
this pipeline cares most about. Stated explicitly because every downstream
number silently depends on it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

SUMMARY_KEYS = ("accuracy", "recall", "precision", "specificity", "g_mean", "ba")


@dataclass
class ConfusionCounts:
    tp: int  # leaf predicted leaf
    tn: int  # wood predicted wood
    fp: int  # wood predicted leaf
    fn: int  # leaf predicted wood

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def confusion(truth, predictions) -> ConfusionCounts:
    """Tally the confusion matrix of hard {0, 1} labels (0 = leaf = positive)."""
    truth = np.asarray(truth)
    predictions = np.asarray(predictions)
    if truth.shape != predictions.shape:
        raise ValueError(
            f"length mismatch: truth {truth.shape} vs predictions {predictions.shape}"
        )
    if not (np.isin(truth, (0, 1)).all() and np.isin(predictions, (0, 1)).all()):
        raise ValueError("labels must be 0 (leaf) or 1 (wood)")
    return ConfusionCounts(
        tp=int(((truth == 0) & (predictions == 0)).sum()),
        tn=int(((truth == 1) & (predictions == 1)).sum()),
        fp=int(((truth == 1) & (predictions == 0)).sum()),
        fn=int(((truth == 0) & (predictions == 1)).sum()),
    )


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient; 0 when the denominator degenerates."""
    denominator = (
        (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    )
    if denominator == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denominator)


def _ratio(numerator, denominator, name) -> float:
    if denominator == 0:
        warnings.warn(f"{name} has a zero denominator; reporting 0")
        return 0.0
    return numerator / denominator


def summary(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, recall, precision, specificity, G-mean and balanced accuracy.

    Zero denominators yield 0 and emit a warning rather than raising, so
    degenerate predictors still produce a full report.
    """
    recall = _ratio(c.tp, c.tp + c.fn, "recall")
    precision = _ratio(c.tp, c.tp + c.fp, "precision")
    specificity = _ratio(c.tn, c.tn + c.fp, "specificity")
    return {
        "accuracy": _ratio(c.tp + c.tn, c.total, "accuracy"),
        "recall": recall,
        "precision": precision,
        "specificity": specificity,
        "g_mean": math.sqrt(recall * specificity),
        "ba": (recall + specificity) / 2.0,
    }


def auroc(truth, scores) -> float:
    """Rank-based AUROC of ``scores`` for class 1, with midrank tie handling.

    Equals the probability that a random class-1 point outscores a random
    class-0 point, counting exact ties as one half. Requires both classes.
    """
    truth = np.asarray(truth)
    scores = np.asarray(scores, dtype=np.float64)
    if truth.shape != scores.shape:
        raise ValueError(
            f"length mismatch: truth {truth.shape} vs scores {scores.shape}"
        )
    positives = int((truth == 1).sum())
    negatives = int((truth == 0).sum())
    if positives == 0 or negatives == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[truth == 1].sum())
    return (rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives)
