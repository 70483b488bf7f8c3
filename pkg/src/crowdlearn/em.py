"""EM training of a classifier jointly with an annotator reliability model.

The E-step combines the classifier's MC-dropout predictive with the
likelihood of every observed annotation; the M-step retrains the classifier
on the resulting soft labels and refits the reliability model by SGA. The
two M-step parts do not share parameters.

Any object exposing ``annotation_reliability``, ``log_prior``, ``sga_fit``
and ``copy`` can stand in for the reliability model (see
:mod:`crowdlearn.baselines` for a per-annotator scalar variant).
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np
from scipy.special import logsumexp

from .bayesian_net import BayesianClassifier, NetworkConfig
from .lftc import AnnotatorModel
from .seeding import subseed, substream
from .voting import majority_labels

WEIGHTINGS = ("count", "uniform")


class PosteriorError(ArithmeticError):
    pass


@dataclass
class LftcConfig:
    """Reliability-model settings; ``iters`` is the SGA pass budget per M-step.

    A short budget makes each M-step a partial one. Fitting the reliabilities
    tightly to the early, vote-like posteriors tends to lock EM onto them.
    """

    latent_dim: int = 10
    lam: float = 0.01
    gamma: float = 0.05
    iters: int = 5
    tol: float = 1e-6
    sign_convention: str = "eq6_negative"
    init_low: float = -0.1
    init_high: float = 0.1

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")

    def to_dict(self):
        return asdict(self)


@dataclass
class EmConfig:
    max_iters: int = 20
    em_tolerance: float = 1e-4
    net_epochs_per_m_step: int = 5
    mc_passes_T: int = 20
    seed: int = 0
    weighting: str = "count"
    freeze_annotators: bool = False

    def __post_init__(self):
        if self.max_iters < 0 or self.net_epochs_per_m_step < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.em_tolerance <= 0:
            raise ValueError("em_tolerance must be positive")
        if self.mc_passes_T < 1:
            raise ValueError("mc_passes_T must be >= 1")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class EmState:
    classifier: Any
    annotator_model: Any
    posteriors: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    loglik_trace: List[float] = field(default_factory=list)
    e_steps: int = 0
    m_steps: int = 0
    converged: bool = False

    @property
    def labels(self):
        return self.posteriors.argmax(axis=1)


def sample_weights(aset, weighting="count"):
    """Per-sample training weight: annotation count, or 1 for annotated samples."""
    counts = aset.sample_counts().astype(float)
    if weighting == "count":
        return counts
    if weighting == "uniform":
        return (counts > 0).astype(float)
    raise ValueError(f"unknown weighting {weighting!r}")


def annotation_log_terms(eta, num_classes):
    """Log-likelihood of an annotation when it is right and when it is wrong.

    The wrong-label mass ``1 - eta`` is shared evenly by the ``C - 1``
    incorrect classes.
    """
    right = np.log(eta)
    wrong = np.log1p(-eta) - np.log(num_classes - 1)
    return right, wrong


def _annotation_log_evidence(aset, annotator_model):
    """(m, C) matrix of summed annotation log-likelihoods per candidate label."""
    eta = annotator_model.annotation_reliability(aset)
    right, wrong = annotation_log_terms(eta, aset.num_classes)
    out = np.zeros((aset.num_samples, aset.num_classes))
    out += np.bincount(aset.ann_sample, weights=wrong, minlength=aset.num_samples)[:, None]
    np.add.at(out, (aset.ann_sample, aset.ann_label), right - wrong)
    return out


def _network_predictive(classifier, X, T, seed):
    return classifier.predict_proba(X, T=T, seed=seed)


def e_step(state, aset, T=20, seed=0):
    """Posterior over the true label of every sample.

    ``p(y_i = c)`` is proportional to the classifier predictive times, for
    every observed annotation of sample ``i``, ``eta`` if the annotation says
    ``c`` and ``(1 - eta) / (C - 1)`` otherwise. Computed in log space.
    """
    net = _network_predictive(state.classifier, aset.features, T, seed)
    with np.errstate(divide="ignore"):
        logp = np.log(net)
    logp += _annotation_log_evidence(aset, state.annotator_model)
    norm = logsumexp(logp, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        bad = int(np.flatnonzero(~np.isfinite(norm.ravel()))[0])
        raise PosteriorError(f"unnormalisable posterior for sample {bad}")
    post = np.exp(logp - norm)
    return post / post.sum(axis=1, keepdims=True)


def log_likelihood(state, aset, T=20, seed=0):
    """Marginal log-likelihood of the observed annotations (annotated samples only)."""
    net = _network_predictive(state.classifier, aset.features, T, seed)
    with np.errstate(divide="ignore"):
        logp = np.log(net) + _annotation_log_evidence(aset, state.annotator_model)
    annotated = aset.sample_counts() > 0
    return float(np.sum(logsumexp(logp[annotated], axis=1))) + state.annotator_model.log_prior(aset)


def objective(state, aset, posteriors, T=20, seed=0):
    """EM surrogate: expected complete-data log-likelihood plus posterior entropy.

    ``sum_i sum_c p_i(c) [log pbar(c | x_i) + log p(L_i | c)] + H(p_i)`` plus
    the reliability prior, where ``pbar`` is the ``T``-pass MC predictive.
    An E-step with the same ``T`` and ``seed`` maximises it exactly (its value
    then equals :func:`log_likelihood` over all samples), and the M-step
    raises it for fixed posteriors, so the trace climbs up to the noise of
    the stochastic network update.
    """
    net = _network_predictive(state.classifier, aset.features, T, seed)
    with np.errstate(divide="ignore"):
        logp = np.log(net) + _annotation_log_evidence(aset, state.annotator_model)
    live = posteriors > 0
    expected = float(np.sum(posteriors[live] * logp[live]))
    entropy = float(-np.sum(posteriors[live] * np.log(posteriors[live])))
    return expected + entropy + state.annotator_model.log_prior(aset)


def m_step(state, aset, cfg: EmConfig, lftc_cfg: Optional[LftcConfig] = None, iteration=0):
    """Retrain the classifier and refit the reliability model on ``state.posteriors``.

    Mutates and returns ``state``; appends the objective to the trace.
    """
    lftc_cfg = lftc_cfg or LftcConfig()
    post = state.posteriors
    w = sample_weights(aset, cfg.weighting)
    if cfg.net_epochs_per_m_step > 0:
        state.classifier.train_epochs(aset.features, post, w, cfg.net_epochs_per_m_step)
    if not cfg.freeze_annotators and lftc_cfg.iters > 0:
        state.annotator_model.sga_fit(
            aset, post, gamma=lftc_cfg.gamma, iters=lftc_cfg.iters,
            seed=subseed(cfg.seed, "sga", iteration), tol=lftc_cfg.tol,
        )
    state.m_steps += 1
    L = objective(state, aset, post, T=cfg.mc_passes_T, seed=subseed(cfg.seed, "objective"))
    if not np.isfinite(L):
        raise FloatingPointError(f"objective is {L} after M-step {state.m_steps}")
    state.objective_trace.append(L)
    return state


def initial_posteriors(aset, seed=0):
    """One-hot majority vote, ties broken uniformly at random."""
    labels = majority_labels(aset, substream(seed, "tiebreak"))
    post = np.zeros((aset.num_samples, aset.num_classes))
    post[np.arange(aset.num_samples), labels] = 1.0
    return post


def init_state(aset, net_cfg: NetworkConfig, lftc_cfg: LftcConfig, cfg: EmConfig,
               annotator_model=None):
    """Fresh classifier and reliability model with majority-vote posteriors."""
    clf = BayesianClassifier(net_cfg, seed=subseed(cfg.seed, "net_init"))
    if annotator_model is None:
        annotator_model = AnnotatorModel.initialize(
            aset.num_annotators, lftc_cfg.latent_dim, aset.num_features,
            lam=lftc_cfg.lam, seed=subseed(cfg.seed, "lftc_init"),
            sign_convention=lftc_cfg.sign_convention,
            low=lftc_cfg.init_low, high=lftc_cfg.init_high, num_samples=aset.num_samples,
        )
    return EmState(clf, annotator_model, initial_posteriors(aset, cfg.seed))


def fit(
    aset,
    net_cfg: NetworkConfig,
    lftc_cfg: Optional[LftcConfig] = None,
    cfg: Optional[EmConfig] = None,
    state: Optional[EmState] = None,
    annotator_model=None,
    callback: Optional[Callable[[int, EmState], None]] = None,
):
    """Alternate M- and E-steps until the objective settles.

    Posteriors start from a majority vote, so each iteration runs the M-step
    on the current posteriors first and then refreshes them with an E-step.
    Passing ``state`` warm-starts from its classifier and reliability model
    (posteriors are recomputed for ``aset`` with an E-step).
    """
    lftc_cfg = lftc_cfg or LftcConfig()
    cfg = cfg or EmConfig()
    if aset.num_samples == 0:
        raise ValueError("cannot fit on an empty annotation set")
    if state is None:
        state = init_state(aset, net_cfg, lftc_cfg, cfg, annotator_model)
    else:
        state = EmState(state.classifier, state.annotator_model, state.posteriors)
        state.posteriors = e_step(state, aset, T=cfg.mc_passes_T,
                                  seed=subseed(cfg.seed, "objective"))
    for it in range(cfg.max_iters):
        m_step(state, aset, cfg, lftc_cfg, iteration=it)
        # same MC draw as the objective, so the E-step maximises it exactly
        state.posteriors = e_step(state, aset, T=cfg.mc_passes_T,
                                  seed=subseed(cfg.seed, "objective"))
        state.e_steps += 1
        state.loglik_trace.append(
            log_likelihood(state, aset, T=cfg.mc_passes_T, seed=subseed(cfg.seed, "objective"))
        )
        if callback is not None:
            callback(it, state)
        tr = state.objective_trace
        if len(tr) >= 2 and abs(tr[-1] - tr[-2]) <= cfg.em_tolerance * abs(tr[-1]):
            state.converged = True
            break
    return state
