"""scikit-learn style wrappers around the EM trainer.

``fit(X, Y)`` takes a dense crowd label matrix ``Y`` of shape
``(n_samples, n_annotators)`` with ``-1`` for labels that were never
collected. Classes are the integers ``0 .. n_classes - 1``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import em
from .baselines import SparseReliabilityModel, logistic_config
from .bayesian_net import NetworkConfig
from .lftc import expertise as _expertise
from .validation import build_annotation_set, check_features
from .voting import majority_vote

RELIABILITY_MODELS = ("lowrank", "sparse")


class CrowdClassifier(ClassifierMixin, BaseEstimator):
    """Classifier trained from sparse crowd labels by EM.

    Parameters
    ----------
    hidden_sizes : tuple of int
        Hidden layer widths; ``()`` gives multinomial logistic regression.
    reliability_model : {"lowrank", "sparse"}
        Low-rank annotator embeddings or one scalar reliability per annotator.
    """

    def __init__(
        self,
        hidden_sizes=(64,),
        dropout_rate=0.25,
        weight_decay=1e-4,
        learning_rate=1e-3,
        batch_size=128,
        latent_dim=10,
        lam=0.01,
        sga_step=0.05,
        sga_iters=5,
        max_iters=20,
        em_tolerance=1e-4,
        epochs_per_step=5,
        mc_passes=20,
        weighting="count",
        reliability_model="lowrank",
        n_classes=None,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.dropout_rate = dropout_rate
        self.weight_decay = weight_decay
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.lam = lam
        self.sga_step = sga_step
        self.sga_iters = sga_iters
        self.max_iters = max_iters
        self.em_tolerance = em_tolerance
        self.epochs_per_step = epochs_per_step
        self.mc_passes = mc_passes
        self.weighting = weighting
        self.reliability_model = reliability_model
        self.n_classes = n_classes
        self.random_state = random_state

    def _configs(self, k, C):
        net = NetworkConfig(
            input_dim=k, hidden_sizes=tuple(self.hidden_sizes), num_classes=C,
            dropout_rate=self.dropout_rate, weight_decay=self.weight_decay,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
        )
        lftc = em.LftcConfig(latent_dim=self.latent_dim, lam=self.lam,
                             gamma=self.sga_step, iters=self.sga_iters)
        cfg = em.EmConfig(max_iters=self.max_iters, em_tolerance=self.em_tolerance,
                          net_epochs_per_m_step=self.epochs_per_step,
                          mc_passes_T=self.mc_passes, seed=int(self.random_state),
                          weighting=self.weighting)
        return net, lftc, cfg

    def fit(self, X, Y):
        if self.reliability_model not in RELIABILITY_MODELS:
            raise ValueError(f"reliability_model must be one of {RELIABILITY_MODELS}")
        aset = build_annotation_set(X, Y, self.n_classes)
        net, lftc, cfg = self._configs(aset.num_features, aset.num_classes)
        model = None
        if self.reliability_model == "sparse":
            model = SparseReliabilityModel.initialize(aset.num_annotators, lam=self.lam)
        self.state_ = em.fit(aset, net, lftc, cfg, annotator_model=model)
        self.classes_ = np.arange(aset.num_classes)
        self.n_features_in_ = aset.num_features
        self.n_annotators_ = aset.num_annotators
        self.posteriors_ = self.state_.posteriors
        self.labels_ = self.state_.labels
        self.objective_trace_ = list(self.state_.objective_trace)
        self._aset = aset
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "state_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.state_.classifier.predict_proba(X, T=self.mc_passes, seed=int(self.random_state))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def expertise(self):
        """Mean learned reliability of each annotator over their own annotations."""
        check_is_fitted(self, "state_")
        return _expertise(self.state_.annotator_model, self._aset)

    def reliability(self, X, samples, annotators):
        """Learned reliability of annotator ``annotators[a]`` on ``X[samples[a]]``."""
        check_is_fitted(self, "state_")
        return self.state_.annotator_model.reliabilities(check_features(X), samples, annotators)


class LogisticCrowdClassifier(CrowdClassifier):
    """:class:`CrowdClassifier` with the network reduced to logistic regression."""

    def _configs(self, k, C):
        net, lftc, cfg = super()._configs(k, C)
        return logistic_config(net), lftc, cfg


class MajorityVoteAggregator(BaseEstimator):
    """Label aggregation by vote counts; ``fit`` stores nothing but the shape."""

    def __init__(self, n_classes=None, random_state=0):
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, Y):
        aset = build_annotation_set(X, Y, self.n_classes)
        self.classes_ = np.arange(aset.num_classes)
        self.posteriors_ = majority_vote(aset)
        self.labels_ = em.initial_posteriors(aset, int(self.random_state)).argmax(axis=1)
        return self

    def fit_predict(self, X, Y):
        return self.fit(X, Y).labels_
