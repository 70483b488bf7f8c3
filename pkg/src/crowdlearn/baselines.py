"""Comparison methods: majority voting and two reduced EM variants.

``fit_dlc_sparse`` keeps the network but replaces the low-rank reliability
model by one free scalar reliability per annotator. ``fit_dlc_lr`` keeps
the low-rank reliability model but shrinks the network to multinomial
logistic regression. Both run through :func:`crowdlearn.em.fit` unchanged.
"""

import json
from dataclasses import replace

import numba
import numpy as np

from . import em
from .bayesian_net import NetworkConfig
from .lftc import ETA_CLIP, MAX_HALVINGS, SGADivergedError, _sigmoid, clip_eta, correct_label_mass
from .voting import majority_vote

__all__ = [
    "SparseReliabilityModel",
    "fit_dlc_lr",
    "fit_dlc_sparse",
    "logistic_config",
    "majority_vote",
]


@numba.njit(cache=True)
def _scalar_sga_pass(b, jj, pc, order, gamma, lam, clip):
    for t in range(order.size):
        a = order[t]
        j = jj[a]
        eta = 1.0 / (1.0 + np.exp(-b[j]))
        eta = min(max(eta, clip), 1.0 - clip)
        b[j] += gamma * ((pc[a] - eta) - 2.0 * lam * b[j])


class SparseReliabilityModel:
    """One reliability ``sigmoid(b_j)`` per annotator, independent of the sample.

    Drop-in replacement for :class:`~crowdlearn.lftc.AnnotatorModel` inside
    the EM loop.
    """

    def __init__(self, logits, lam=0.01):
        self.logits = np.asarray(logits, dtype=float)
        self.lam = lam

    @classmethod
    def initialize(cls, n, lam=0.01):
        return cls(np.zeros(n), lam)

    @property
    def num_annotators(self):
        return self.logits.size

    @property
    def per_annotator_reliability(self):
        return clip_eta(_sigmoid(self.logits))

    def copy(self):
        return SparseReliabilityModel(self.logits.copy(), self.lam)

    def reliabilities(self, X, samples, annotators):
        return self.per_annotator_reliability[np.asarray(annotators)]

    def annotation_reliability(self, aset):
        return self.per_annotator_reliability[aset.ann_annotator]

    def log_prior(self, aset):
        return -self.lam * float(np.sum(self.logits[aset.ann_annotator] ** 2))

    def objective(self, aset, p_correct):
        eta = self.annotation_reliability(aset)
        ll = p_correct * np.log(eta) + (1.0 - p_correct) * np.log1p(-eta)
        return float(np.sum(ll)) + self.log_prior(aset)

    def sga_fit(self, aset, posteriors, gamma=0.05, iters=100, seed=0, tol=1e-6, backtrack=True):
        """Per-annotation gradient ascent on the scalar logits.

        Backtracking works as in :func:`crowdlearn.lftc.sga_fit`.
        """
        pc = correct_label_mass(aset, np.asarray(posteriors, dtype=float))
        log = []
        if aset.num_annotations == 0 or iters <= 0:
            return log
        rng = np.random.default_rng(seed)
        prev = self.objective(aset, pc)
        keep = self.logits.copy()
        min_gamma = gamma * 2.0 ** -MAX_HALVINGS
        jj = np.ascontiguousarray(aset.ann_annotator, dtype=np.int64)
        for it in range(iters):
            order = rng.permutation(aset.num_annotations)
            _scalar_sga_pass(self.logits, jj, pc, order, float(gamma), float(self.lam), ETA_CLIP)
            cur = self.objective(aset, pc)
            if not np.isfinite(cur):
                raise SGADivergedError(f"objective became {cur} after pass {it + 1}")
            if backtrack and cur < prev:
                self.logits[...] = keep
                log.append(prev)
                gamma *= 0.5
                if gamma < min_gamma:
                    break
                continue
            log.append(cur)
            if abs(cur - prev) <= tol * abs(cur):
                break
            prev = cur
            keep[...] = self.logits
        return log

    def to_dict(self):
        return {
            "format": "crowdlearn.sparse_reliability",
            "version": 1,
            "lambda": self.lam,
            "logits": self.logits.tolist(),
        }

    @classmethod
    def from_dict(cls, rec):
        if rec.get("format") != "crowdlearn.sparse_reliability":
            raise ValueError("not a sparse-reliability checkpoint")
        return cls(np.array(rec["logits"], dtype=float), rec["lambda"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def fit_dlc_sparse(aset, net_cfg, lftc_cfg=None, cfg=None, **kwargs):
    """EM with a per-annotator scalar reliability instead of the low-rank model."""
    lftc_cfg = lftc_cfg or em.LftcConfig()
    model = SparseReliabilityModel.initialize(aset.num_annotators, lam=lftc_cfg.lam)
    return em.fit(aset, net_cfg, lftc_cfg, cfg, annotator_model=model, **kwargs)


def logistic_config(net_cfg: NetworkConfig):
    """The same network settings with no hidden layer and no dropout."""
    return replace(net_cfg, hidden_sizes=(), dropout_rate=0.0)


def fit_dlc_lr(aset, net_cfg, lftc_cfg=None, cfg=None, **kwargs):
    """EM whose classifier is multinomial logistic regression."""
    return em.fit(aset, logistic_config(net_cfg), lftc_cfg, cfg, **kwargs)
