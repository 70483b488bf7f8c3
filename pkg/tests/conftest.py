import numpy as np
import pytest

from crowdlearn.dataset import AnnotationSet


def dense_set(m, n, C=2, seed=0, k=3, p_correct=0.8):
    """Fully observed set where every annotator is right with ``p_correct``."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, k))
    y = rng.integers(0, C, size=m)
    ii = np.repeat(np.arange(m), n)
    jj = np.tile(np.arange(n), m)
    correct = rng.random(m * n) < p_correct
    wrong = (y[ii] + rng.integers(1, C, size=m * n)) % C
    lab = np.where(correct, y[ii], wrong)
    return AnnotationSet(X, ii, jj, lab, n, C, y)


@pytest.fixture
def small_dense():
    return dense_set(50, 5, seed=1)
