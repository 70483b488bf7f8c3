import numpy as np


def majority_vote(aset):
    """Vote-count posteriors: each row is proportional to the label counts.

    Samples without annotations get the uniform distribution; tied counts
    stay tied.
    """
    counts = aset.label_counts()
    totals = counts.sum(axis=1, keepdims=True)
    uniform = np.full_like(counts, 1.0 / aset.num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), uniform)


def majority_labels(aset, rng):
    """Majority-vote label per sample with ties broken uniformly at random."""
    counts = aset.label_counts()
    top = counts == counts.max(axis=1, keepdims=True)
    # a uniform random key per candidate picks one of the tied maxima
    keys = np.where(top, rng.random(counts.shape), -1.0)
    return keys.argmax(axis=1)
