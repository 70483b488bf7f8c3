"""Low-rank annotator reliability model.

The reliability of annotator ``j`` on sample ``x`` is a sigmoid of the
bilinear score ``u_j . (F x)``, where ``u_j`` is a ``d``-dimensional annotator
embedding and ``F`` a shared ``d x k`` projection. An annotation is correct
with probability equal to that reliability; a Gaussian prior on the
embeddings becomes an L2 penalty ``lam * ||u_j||^2``.

Parameters are fitted by stochastic gradient ascent over the observed
annotations, one annotation at a time (:func:`sga_fit`).
"""

import json
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .synthetic import SIGN_CONVENTIONS, sign_factor

ETA_CLIP = 1e-12
CHECKPOINT_VERSION = 1


class SGADivergedError(FloatingPointError):
    pass


def clip_eta(eta):
    return np.clip(eta, ETA_CLIP, 1.0 - ETA_CLIP)


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class AnnotatorModel:
    """Annotator embeddings ``(n, d)`` and projection ``(d, k)``."""

    embeddings: np.ndarray
    projection: np.ndarray
    lam: float = 0.01
    sign_convention: str = "eq6_negative"

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.projection = np.asarray(self.projection, dtype=float)
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValueError(f"unknown sign convention {self.sign_convention!r}")
        if self.embeddings.ndim != 2 or self.projection.ndim != 2:
            raise ValueError("embeddings and projection must be 2-d")
        if self.embeddings.shape[1] != self.projection.shape[0]:
            raise ValueError("embedding width must equal projection rows (d)")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @classmethod
    def initialize(cls, n, d, k, lam=0.01, seed=0, sign_convention="eq6_negative",
                   low=-0.1, high=0.1, num_samples=None):
        if num_samples is not None and d > min(num_samples, n):
            warnings.warn(f"latent dimension d={d} exceeds min(m, n)={min(num_samples, n)}")
        rng = np.random.default_rng(seed)
        U = rng.uniform(low, high, size=(n, d))
        F = rng.uniform(low, high, size=(d, k))
        return cls(U, F, lam, sign_convention)

    @property
    def num_annotators(self):
        return self.embeddings.shape[0]

    @property
    def latent_dim(self):
        return self.embeddings.shape[1]

    @property
    def num_features(self):
        return self.projection.shape[1]

    @property
    def sign(self):
        return sign_factor(self.sign_convention)

    def copy(self):
        return AnnotatorModel(self.embeddings.copy(), self.projection.copy(),
                              self.lam, self.sign_convention)

    # -- shared interface with the other reliability models -----------------

    def scores(self, X, samples, annotators):
        G = np.asarray(X, dtype=float) @ self.projection.T
        return np.einsum("ad,ad->a", self.embeddings[annotators], G[samples])

    def reliabilities(self, X, samples, annotators):
        """Clipped reliability for each ``(samples[a], annotators[a])`` pair."""
        return clip_eta(_sigmoid(self.sign * self.scores(X, samples, annotators)))

    def annotation_reliability(self, aset):
        return self.reliabilities(aset.features, aset.ann_sample, aset.ann_annotator)

    def log_prior(self, aset):
        """``-lam * ||u_j||^2`` summed once per annotation."""
        sq = np.sum(self.embeddings ** 2, axis=1)
        return -self.lam * float(np.sum(sq[aset.ann_annotator]))

    def sga_fit(self, aset, posteriors, gamma=0.05, iters=100, seed=0, tol=1e-6, backtrack=True):
        return sga_fit(self, aset, posteriors, gamma=gamma, iters=iters, seed=seed, tol=tol,
                       backtrack=backtrack)

    # -- checkpoints --------------------------------------------------------

    def to_dict(self):
        n, d = self.embeddings.shape
        return {
            "format": "crowdlearn.annotator_model",
            "version": CHECKPOINT_VERSION,
            "n": n,
            "d": d,
            "k": self.projection.shape[1],
            "lambda": self.lam,
            "sign_convention": self.sign_convention,
            "embeddings": self.embeddings.ravel().tolist(),
            "projection": self.projection.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, rec):
        if rec.get("format") != "crowdlearn.annotator_model":
            raise ValueError("not an annotator-model checkpoint")
        if rec.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {rec.get('version')}")
        n, d, k = rec["n"], rec["d"], rec["k"]
        return cls(
            np.array(rec["embeddings"], dtype=float).reshape(n, d),
            np.array(rec["projection"], dtype=float).reshape(d, k),
            rec["lambda"],
            rec["sign_convention"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# scalar API


def _check_index(model, j):
    if not 0 <= j < model.num_annotators:
        raise IndexError(f"annotator {j} outside [0, {model.num_annotators})")


def reliability(model, x, j):
    """Reliability of annotator ``j`` on feature vector ``x``."""
    _check_index(model, j)
    x = np.asarray(x, dtype=float)
    if x.shape != (model.num_features,):
        raise ValueError(f"x must have {model.num_features} features")
    s = float(model.embeddings[j] @ (model.projection @ x))
    return float(clip_eta(_sigmoid(model.sign * s)))


def annotation_log_likelihood(model, x, j, annotation, y):
    """``log eta`` if the annotation equals the true label, else ``log(1 - eta)``."""
    eta = reliability(model, x, j)
    return float(np.log(eta) if annotation == y else np.log1p(-eta))


def expected_log_likelihood(eta, p_correct):
    """Log-likelihood of one annotation averaged over the label posterior."""
    eta = clip_eta(eta)
    return p_correct * np.log(eta) + (1.0 - p_correct) * np.log1p(-eta)


def dlik_deta(eta, p_correct):
    """Derivative of :func:`expected_log_likelihood` with respect to ``eta``."""
    eta = clip_eta(eta)
    return p_correct / eta - (1.0 - p_correct) / (1.0 - eta)


def annotation_objective(model, x, j, p_correct):
    """Per-annotation objective: expected log-likelihood minus the embedding penalty."""
    eta = reliability(model, x, j)
    u = model.embeddings[j]
    return float(expected_log_likelihood(eta, p_correct) - model.lam * u @ u)


def annotation_gradients(model, x, j, p_correct):
    """Gradients of :func:`annotation_objective` w.r.t. ``u_j`` and ``F``.

    Chain rule through the reliability: ``dJ/deta * deta/du - 2 lam u`` and
    ``dJ/deta * deta/dF``, with ``deta/du = s eta (1 - eta) F x`` and
    ``deta/dF = s eta (1 - eta) u x^T`` for sign factor ``s``.
    """
    x = np.asarray(x, dtype=float)
    u = model.embeddings[j]
    Fx = model.projection @ x
    eta = reliability(model, x, j)
    g = dlik_deta(eta, p_correct) * model.sign * eta * (1.0 - eta)
    grad_u = g * Fx - 2.0 * model.lam * u
    grad_F = g * np.outer(u, x)
    return grad_u, grad_F


def objective(model, aset, p_correct):
    """Total objective over all observed annotations."""
    eta = model.annotation_reliability(aset)
    return float(np.sum(expected_log_likelihood(eta, p_correct))) + model.log_prior(aset)


def correct_label_mass(aset, posteriors):
    """Posterior probability that each annotation's label is the true one."""
    posteriors = np.asarray(posteriors, dtype=float)
    return posteriors[aset.ann_sample, aset.ann_label]


def expertise(model, aset, j=None):
    """Mean reliability over annotator ``j``'s observed annotations.

    Annotators without annotations get the neutral value 0.5. With
    ``j=None`` an ``(n,)`` vector for all annotators is returned.
    """
    eta = model.annotation_reliability(aset)
    n = aset.num_annotators
    sums = np.bincount(aset.ann_annotator, weights=eta, minlength=n)
    counts = np.bincount(aset.ann_annotator, minlength=n)
    out = np.full(n, 0.5)
    has = counts > 0
    out[has] = sums[has] / counts[has]
    if j is None:
        return out
    if not 0 <= j < n:
        raise IndexError(f"annotator {j} outside [0, {n})")
    return float(out[j])


# ---------------------------------------------------------------------------
# stochastic gradient ascent

MAX_HALVINGS = 20


@numba.njit(cache=True)
def _sga_pass(U, F, X, ii, jj, pc, order, gamma, lam, sgn, clip):
    d, k = F.shape
    Fx = np.empty(d)
    for t in range(order.size):
        a = order[t]
        i = ii[a]
        j = jj[a]
        for r in range(d):
            acc = 0.0
            for c in range(k):
                acc += F[r, c] * X[i, c]
            Fx[r] = acc
        # embedding step at the current point
        s = 0.0
        for r in range(d):
            s += U[j, r] * Fx[r]
        eta = 1.0 / (1.0 + np.exp(-sgn * s))
        eta = min(max(eta, clip), 1.0 - clip)
        g = sgn * (pc[a] - eta)
        for r in range(d):
            U[j, r] += gamma * (g * Fx[r] - 2.0 * lam * U[j, r])
        # projection step with the freshly updated embedding
        s = 0.0
        for r in range(d):
            s += U[j, r] * Fx[r]
        eta = 1.0 / (1.0 + np.exp(-sgn * s))
        eta = min(max(eta, clip), 1.0 - clip)
        g = sgn * (pc[a] - eta)
        for r in range(d):
            step = gamma * g * U[j, r]
            for c in range(k):
                F[r, c] += step * X[i, c]


def sga_pass(model, X, ann_sample, ann_annotator, p_correct, order, gamma):
    """One in-place pass over the annotations in ``order``."""
    _sga_pass(
        model.embeddings, model.projection, np.ascontiguousarray(X, dtype=float),
        np.ascontiguousarray(ann_sample, dtype=np.int64),
        np.ascontiguousarray(ann_annotator, dtype=np.int64),
        np.ascontiguousarray(p_correct, dtype=float),
        np.ascontiguousarray(order, dtype=np.int64),
        float(gamma), float(model.lam), model.sign, ETA_CLIP,
    )


def sga_fit(model, aset, posteriors, gamma=0.05, iters=100, seed=0, tol=1e-6, backtrack=True):
    """Fit ``model`` in place by per-annotation gradient ascent.

    Each pass visits the observed annotations in a fresh random order and
    alternates an embedding step and a projection step per annotation.
    Stops after ``iters`` passes or once the relative change of the total
    objective over a pass drops below ``tol``.

    With ``backtrack`` a pass that lowers the objective is undone and the
    step is halved for the remaining passes, so a fit never lowers the
    objective for the posteriors it was given. The projection is shared by
    every annotation, so a step that suits the embeddings can overshoot it.

    Returns the objective held after each pass.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    posteriors = np.asarray(posteriors, dtype=float)
    if posteriors.shape != (aset.num_samples, aset.num_classes):
        raise ValueError("posteriors must be (m, C)")
    if np.any(posteriors < -1e-12) or not np.allclose(posteriors.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("posterior rows must be probability distributions")
    pc = correct_label_mass(aset, posteriors)
    log = []
    if aset.num_annotations == 0 or iters <= 0:
        return log
    rng = np.random.default_rng(seed)
    prev = objective(model, aset, pc)
    keep_U, keep_F = model.embeddings.copy(), model.projection.copy()
    min_gamma = gamma * 2.0 ** -MAX_HALVINGS
    for it in range(iters):
        order = rng.permutation(aset.num_annotations)
        sga_pass(model, aset.features, aset.ann_sample, aset.ann_annotator, pc, order, gamma)
        cur = objective(model, aset, pc)
        if not np.isfinite(cur) or not (
            np.all(np.isfinite(model.embeddings)) and np.all(np.isfinite(model.projection))
        ):
            raise SGADivergedError(
                f"objective became {cur} after pass {it + 1} (gamma={gamma}); reduce gamma"
            )
        if backtrack and cur < prev:
            model.embeddings[...] = keep_U
            model.projection[...] = keep_F
            log.append(prev)
            gamma *= 0.5
            if gamma < min_gamma:
                break
            continue
        log.append(cur)
        if abs(cur - prev) <= tol * abs(cur):
            break
        prev = cur
        if backtrack:
            keep_U[...] = model.embeddings
            keep_F[...] = model.projection
    return log
