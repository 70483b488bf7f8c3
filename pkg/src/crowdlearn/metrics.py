"""Evaluation metrics: accuracy, ROC AUC and Pearson correlation."""

import numpy as np
from scipy.stats import rankdata


def accuracy(predicted, golden):
    """Fraction of positions where ``predicted`` equals ``golden``."""
    predicted = np.asarray(predicted)
    golden = np.asarray(golden)
    if predicted.shape != golden.shape:
        raise ValueError(
            f"length mismatch: {predicted.shape} predictions vs {golden.shape} labels"
        )
    if predicted.size == 0:
        raise ValueError("accuracy of an empty prediction vector is undefined")
    return float(np.mean(predicted == golden))


def _binary_auc(scores, positive):
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both positive and negative examples")
    # average ranks give ties half credit
    ranks = rankdata(scores, method="average")
    u_stat = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def auc(scores, golden):
    """Area under the ROC curve in its Mann-Whitney form.

    Parameters
    ----------
    scores : array of shape (m,) or (m, C)
        For binary labels, a 1-d score for the positive class (a two-column
        probability matrix is also accepted). For ``C > 2`` a score matrix,
        reduced by a macro-average of one-vs-rest AUCs.
    golden : array of shape (m,)
        Integer class labels.
    """
    scores = np.asarray(scores, dtype=float)
    golden = np.asarray(golden)
    if scores.shape[0] != golden.shape[0]:
        raise ValueError("scores and labels differ in length")
    if scores.ndim == 1:
        classes = np.unique(golden)
        if classes.size != 2:
            raise ValueError("AUC requires exactly two classes for 1-d scores")
        return _binary_auc(scores, golden == classes[1])
    if scores.shape[1] == 2:
        return _binary_auc(scores[:, 1], golden == 1)
    present = np.unique(golden)
    if present.size < 2:
        raise ValueError("AUC requires at least two classes present")
    return float(np.mean([_binary_auc(scores[:, c], golden == c) for c in present]))


def pearson(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson expects two 1-d arrays of equal length")
    if a.size < 2:
        raise ValueError("pearson needs at least two points")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("pearson is undefined for a zero-variance input")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))
