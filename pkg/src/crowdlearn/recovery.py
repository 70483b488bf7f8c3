"""How well a fitted model recovers a simulated crowd's truth."""

import numpy as np

from .lftc import expertise
from .metrics import accuracy, pearson


def sign_test(learned_eta, true_eta, threshold=0.6):
    """Fraction of annotations with true reliability above ``threshold``
    whose learned reliability exceeds 0.5 (NaN if there are none)."""
    sel = np.asarray(true_eta) > threshold
    if not np.any(sel):
        return float("nan")
    return float(np.mean(np.asarray(learned_eta)[sel] > 0.5))


def recovery_metrics(state, aset, truth=None):
    """Inferred-label accuracy plus, given ``truth``, reliability and expertise recovery."""
    out = {}
    if aset.has_golden:
        known = aset.golden >= 0
        out["inferred_label_accuracy"] = accuracy(state.labels[known], aset.golden[known])
    if truth is not None:
        true_eta = truth.aligned_reliability(aset)
        learned_eta = state.annotator_model.annotation_reliability(aset)
        ok = np.isfinite(true_eta)
        out["reliability_correlation"] = pearson(learned_eta[ok], true_eta[ok])
        out["reliability_sign_test"] = sign_test(learned_eta[ok], true_eta[ok])
        active = aset.annotator_counts() > 0
        out["expertise_correlation"] = pearson(
            expertise(state.annotator_model, aset)[active], truth.expertise[active]
        )
    return out
