"""Feed-forward softmax classifier with MC-dropout predictions.

Training minimises a per-sample weighted cross-entropy against soft targets
(the label posteriors from the E-step) plus an L2 penalty on the weight
matrices, using RMSprop on shuffled mini-batches. Dropout acts on hidden
activations (inverted dropout), so running it at prediction time and
averaging ``T`` passes gives the Monte Carlo predictive.

With ``hidden_sizes=()`` the network degenerates to multinomial logistic
regression; dropout then has nothing to act on.
"""

import json
import math
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

CHECKPOINT_VERSION = 1
RMS_EPS = 1e-8


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class NetworkConfig:
    input_dim: int
    hidden_sizes: Tuple[int, ...] = (64,)
    num_classes: int = 2
    dropout_rate: float = 0.25
    weight_decay: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 128
    rms_decay: float = 0.9

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 < self.rms_decay < 1.0:
            raise ValueError("rms_decay must lie in (0, 1)")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_sizes, self.num_classes)

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass
class PredictiveSample:
    """``T`` stochastic forward passes for one input."""

    probs: np.ndarray

    @property
    def mean_probs(self):
        return self.probs.mean(axis=0)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predictive_entropy(mean_probs):
    """Shannon entropy (nats) of a predictive distribution, ``0 ln 0 = 0``.

    Accepts a :class:`PredictiveSample`, a probability vector, or an
    ``(m, C)`` matrix (one entropy per row).
    """
    if isinstance(mean_probs, PredictiveSample):
        mean_probs = mean_probs.mean_probs
    p = np.asarray(mean_probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, -p * np.log(p), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h


class BayesianClassifier:
    """MLP with ReLU hidden layers, softmax output and dropout.

    Parameters
    ----------
    config : NetworkConfig
    seed : int
        Root seed; independent streams are spawned for weight init, training
        dropout masks and mini-batch shuffling.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        init_ss, drop_ss, shuf_ss = np.random.SeedSequence(seed).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        sizes = config.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            self.weights.append(init_rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.rms_weights = [np.zeros_like(w) for w in self.weights]
        self.rms_biases = [np.zeros_like(b) for b in self.biases]
        self.dropout_rng = np.random.default_rng(drop_ss)
        self.shuffle_rng = np.random.default_rng(shuf_ss)

    # -- parameters ---------------------------------------------------------

    @property
    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        clone = BayesianClassifier.__new__(BayesianClassifier)
        clone.config = self.config
        clone.seed = self.seed
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        clone.rms_weights = [w.copy() for w in self.rms_weights]
        clone.rms_biases = [b.copy() for b in self.rms_biases]
        clone.dropout_rng = np.random.default_rng()
        clone.dropout_rng.bit_generator.state = self.dropout_rng.bit_generator.state
        clone.shuffle_rng = np.random.default_rng()
        clone.shuffle_rng.bit_generator.state = self.shuffle_rng.bit_generator.state
        return clone

    # -- forward / backward -------------------------------------------------

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.config.input_dim:
            raise ValueError(
                f"expected inputs with {self.config.input_dim} features, got shape {X.shape}"
            )
        return X2, single

    def sample_masks(self, batch, rng):
        """Inverted-dropout multipliers for each hidden layer."""
        p = self.config.dropout_rate
        if p == 0.0:
            return None
        keep = 1.0 - p
        return [
            (rng.random((batch, h)) < keep) / keep for h in self.config.hidden_sizes
        ]

    def _logits(self, X, masks=None):
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if layer == last:
                return z, acts, pre
            pre.append(z)
            h = np.maximum(z, 0.0)
            if masks is not None:
                h = h * masks[layer]
            acts.append(h)
        raise AssertionError("unreachable")

    def forward(self, x, dropout_on=False, mask_seed=None):
        """Softmax probabilities for one input (or a batch of rows).

        With ``dropout_on`` each hidden unit is zeroed with probability
        ``dropout_rate`` and survivors are scaled by ``1 / (1 - rate)``.
        Masks come from ``mask_seed`` when given, else from the classifier's
        own dropout stream.
        """
        X, single = self._check_input(x)
        masks = None
        if dropout_on:
            rng = self.dropout_rng if mask_seed is None else np.random.default_rng(mask_seed)
            masks = self.sample_masks(X.shape[0], rng)
        logits, _, _ = self._logits(X, masks)
        probs = np.exp(log_softmax(logits))
        return probs[0] if single else probs

    def loss_and_grads(self, X, targets, sample_weights, masks=None):
        """Weighted soft-target cross-entropy plus ``weight_decay * ||W||^2``.

        The data term is averaged over the batch size. Returns the loss and
        gradients aligned with :attr:`params`.
        """
        B = X.shape[0]
        logits, acts, pre = self._logits(X, masks)
        logp = log_softmax(logits)
        w = np.asarray(sample_weights, dtype=float)
        data = -np.sum(w * np.sum(targets * logp, axis=1)) / B
        wd = self.config.weight_decay
        penalty = wd * sum(float(np.sum(W * W)) for W in self.weights)

        # softmax + CE: d/dlogits = p * sum(t) - t
        delta = (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets) * (w / B)[:, None]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = acts[layer].T @ delta + 2.0 * wd * self.weights[layer]
            grads_b[layer] = delta.sum(axis=0)
            if layer == 0:
                break
            delta = delta @ self.weights[layer].T
            if masks is not None:
                delta = delta * masks[layer - 1]
            delta = delta * (pre[layer - 1] > 0.0)
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads += [gw, gb]
        return data + penalty, grads

    def _rmsprop_step(self, grads):
        lr = self.config.learning_rate
        rho = self.config.rms_decay
        caches = []
        for cw, cb in zip(self.rms_weights, self.rms_biases):
            caches += [cw, cb]
        for param, cache, g in zip(self.params, caches, grads):
            cache *= rho
            cache += (1.0 - rho) * g * g
            param -= lr * g / (np.sqrt(cache) + RMS_EPS)

    # -- training -----------------------------------------------------------

    def train_epochs(self, X, soft_targets, sample_weights=None, epochs=1):
        """Run ``epochs`` passes of mini-batch RMSprop; return per-epoch loss.

        Samples with zero weight are dropped before batching, so they have no
        influence at all on the updates.
        """
        X, _ = self._check_input(X)
        T = np.asarray(soft_targets, dtype=float)
        if T.shape != (X.shape[0], self.config.num_classes):
            raise ValueError("soft_targets must be (m, num_classes)")
        if sample_weights is None:
            sample_weights = np.ones(X.shape[0])
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != (X.shape[0],) or np.any(w < 0):
            raise ValueError("sample_weights must be a nonnegative vector of length m")
        keep = w > 0
        X, T, w = X[keep], T[keep], w[keep]
        log = []
        if X.shape[0] == 0:
            return log
        bs = self.config.batch_size
        for epoch in range(epochs):
            order = self.shuffle_rng.permutation(X.shape[0])
            total = 0.0
            for start in range(0, order.size, bs):
                idx = order[start:start + bs]
                masks = self.sample_masks(idx.size, self.dropout_rng)
                loss, grads = self.loss_and_grads(X[idx], T[idx], w[idx], masks)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss {loss} in epoch {epoch}, batch starting at {start}; "
                        f"learning_rate={self.config.learning_rate}"
                    )
                self._rmsprop_step(grads)
                total += loss * idx.size
            log.append(total / order.size)
        return log

    # -- MC dropout prediction ---------------------------------------------

    def mc_passes(self, X, T, seed):
        """``(T, m, C)`` stack of softmax outputs with dropout active."""
        if T < 1:
            raise ValueError("T must be >= 1")
        X, _ = self._check_input(X)
        rng = np.random.default_rng(seed)
        out = np.empty((T, X.shape[0], self.config.num_classes))
        for t in range(T):
            masks = self.sample_masks(X.shape[0], rng)
            logits, _, _ = self._logits(X, masks)
            out[t] = np.exp(log_softmax(logits))
        return out

    def mc_predict(self, x, T=20, seed=0):
        """:class:`PredictiveSample` of ``T`` dropout passes for one input."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("mc_predict takes a single feature vector")
        return PredictiveSample(self.mc_passes(x[None, :], T, seed)[:, 0, :])

    def predict_proba(self, X, T=20, seed=0):
        """MC-dropout predictive mean for every row of ``X``."""
        if self.config.dropout_rate == 0.0 or not self.config.hidden_sizes:
            return self.forward(np.atleast_2d(X))
        return self.mc_passes(X, T, seed).mean(axis=0)

    # -- checkpoints --------------------------------------------------------

    def to_dict(self):
        return {
            "format": "crowdlearn.classifier",
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "layers": [
                {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
            "optimizer": {
                "rms_weights": [c.ravel().tolist() for c in self.rms_weights],
                "rms_biases": [c.tolist() for c in self.rms_biases],
            },
            "rng": {
                "dropout": self.dropout_rng.bit_generator.state,
                "shuffle": self.shuffle_rng.bit_generator.state,
            },
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "crowdlearn.classifier":
            raise ValueError("not a classifier checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        cfg = NetworkConfig(**d["config"])
        clf = cls(cfg, seed=d.get("seed", 0))
        for layer, rec in enumerate(d["layers"]):
            shape = tuple(rec["shape"])
            if shape != clf.weights[layer].shape:
                raise ValueError(f"layer {layer} shape {shape} does not match config")
            clf.weights[layer] = np.array(rec["weight"], dtype=float).reshape(shape)
            clf.biases[layer] = np.array(rec["bias"], dtype=float)
            clf.rms_weights[layer] = np.array(
                d["optimizer"]["rms_weights"][layer], dtype=float).reshape(shape)
            clf.rms_biases[layer] = np.array(d["optimizer"]["rms_biases"][layer], dtype=float)
        clf.dropout_rng.bit_generator.state = d["rng"]["dropout"]
        clf.shuffle_rng.bit_generator.state = d["rng"]["shuffle"]
        return clf

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
