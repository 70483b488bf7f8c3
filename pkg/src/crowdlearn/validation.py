"""Input checks shared by the estimator wrappers and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array

from .dataset import NO_LABEL, AnnotationSet


def check_features(X):
    """2-d finite float array."""
    return check_array(X, dtype=np.float64, ensure_2d=True)


def check_label_matrix(Y, n_samples):
    """Dense ``(m, n)`` crowd label matrix with ``-1`` marking missing labels."""
    Y = check_array(Y, dtype=np.int64, ensure_2d=True, ensure_min_features=1)
    if Y.shape[0] != n_samples:
        raise ValueError(f"label matrix has {Y.shape[0]} rows for {n_samples} samples")
    if np.any(Y < NO_LABEL):
        raise ValueError("labels must be class indices >= 0 or -1 for missing")
    return Y


def label_matrix_to_triples(Y):
    """``(sample, annotator, label)`` columns of the observed cells of ``Y``."""
    i, j = np.nonzero(Y != NO_LABEL)
    return i, j, Y[i, j]


def build_annotation_set(X, Y, n_classes=None, golden=None):
    """AnnotationSet from features and a dense label matrix."""
    X = check_features(X)
    Y = check_label_matrix(Y, X.shape[0])
    i, j, lab = label_matrix_to_triples(Y)
    if n_classes is None:
        n_classes = max(int(lab.max(initial=0)) + 1, 2)
    return AnnotationSet(X, i, j, lab, Y.shape[1], n_classes, golden)


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_fraction(value, name, low_open=True, high_open=False):
    """Real in ``(0, 1]`` by default; the open ends are configurable."""
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a real number, got {value!r}") from None
    lo_ok = v > 0.0 if low_open else v >= 0.0
    hi_ok = v < 1.0 if high_open else v <= 1.0
    if not (lo_ok and hi_ok and np.isfinite(v)):
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return v
