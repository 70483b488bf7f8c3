"""Synthetic golden data and simulated crowds.

:func:`generate_synthetic` simulates a targeted crowd on top of golden-labelled
samples: each annotator gets a random embedding, a shared random projection
maps features to the same latent space, and the sigmoid of their bilinear
score decides whether the annotator reproduces the golden label. A keep
fraction ``rho`` then sparsifies every annotator's row independently.
"""

import json
from dataclasses import dataclass

import numpy as np

from .dataset import NO_LABEL, AnnotationSet

SIGN_CONVENTIONS = ("eq6_negative", "sec52_positive")


def sign_factor(sign_convention):
    """Multiplier on the bilinear score inside the sigmoid.

    ``eq6_negative`` means ``1 / (1 + exp(-s))``; ``sec52_positive`` means
    ``1 / (1 + exp(+s))``.
    """
    if sign_convention == "eq6_negative":
        return 1.0
    if sign_convention == "sec52_positive":
        return -1.0
    raise ValueError(f"unknown sign convention {sign_convention!r}")


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SyntheticGroundTruth:
    """Generator-side truth for a simulated crowd.

    ``reliability`` is aligned with the annotation triples of the generated
    set (``ann_sample``/``ann_annotator``); ``expertise`` is the fraction of
    each annotator's emitted annotations (before sparsification) that match
    the golden label.
    """

    embeddings: np.ndarray
    projection: np.ndarray
    ann_sample: np.ndarray
    ann_annotator: np.ndarray
    reliability: np.ndarray
    expertise: np.ndarray
    sign_convention: str = "eq6_negative"

    def reliability_map(self):
        return {
            (int(i), int(j)): float(r)
            for i, j, r in zip(self.ann_sample, self.ann_annotator, self.reliability)
        }

    def to_dict(self):
        return {
            "version": 1,
            "sign_convention": self.sign_convention,
            "embeddings": self.embeddings.tolist(),
            "projection": self.projection.tolist(),
            "reliability": [
                [int(i), int(j), float(r)]
                for i, j, r in zip(self.ann_sample, self.ann_annotator, self.reliability)
            ],
            "expertise": self.expertise.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        rel = np.array(d["reliability"], dtype=float).reshape(-1, 3)
        return cls(
            embeddings=np.array(d["embeddings"], dtype=float),
            projection=np.array(d["projection"], dtype=float),
            ann_sample=rel[:, 0].astype(np.int64),
            ann_annotator=rel[:, 1].astype(np.int64),
            reliability=rel[:, 2],
            expertise=np.array(d["expertise"], dtype=float),
            sign_convention=d.get("sign_convention", "eq6_negative"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def aligned_reliability(self, aset):
        """True reliability for each annotation of ``aset`` (NaN if unknown)."""
        lookup = dict(zip(zip(self.ann_sample.tolist(), self.ann_annotator.tolist()),
                          self.reliability.tolist()))
        return np.array(
            [lookup.get((int(i), int(j)), np.nan) for i, j in zip(aset.ann_sample, aset.ann_annotator)]
        )


def _wrong_labels(golden, num_classes, rng):
    # uniform over the C-1 classes that differ from golden
    shift = rng.integers(1, num_classes, size=golden.shape[0])
    return (golden + shift) % num_classes


def generate_synthetic(
    X,
    y,
    n,
    d,
    rho,
    embed_low=-0.3,
    embed_high=0.6,
    seed=0,
    sign_convention="eq6_negative",
    num_classes=None,
    chunk_size=2048,
):
    """Simulate ``n`` annotators labelling golden samples ``(X, y)``.

    Every annotator emits one label per sample: the golden label when the
    simulated reliability exceeds 0.5 and a uniformly drawn wrong label
    otherwise. Each emitted annotation is then kept independently with
    probability ``rho``.

    Returns
    -------
    (AnnotationSet, SyntheticGroundTruth)
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (m, k) and y must be (m,)")
    if y.size and (np.any(y == NO_LABEL) or np.any(y < 0)):
        raise ValueError("every golden sample needs a golden label")
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if d < 1:
        raise ValueError("d must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    y = y.astype(np.int64)
    if num_classes is None:
        num_classes = max(int(y.max(initial=0)) + 1, 2)
    sgn = sign_factor(sign_convention)
    m, k = X.shape

    rng = np.random.default_rng(seed)
    U = rng.uniform(embed_low, embed_high, size=(n, d))
    F = rng.uniform(embed_low, embed_high, size=(d, k))
    G = X @ F.T  # (m, d) projected samples

    # expertise over the full emitted row of every annotator
    expertise = np.empty(n)
    for start in range(0, n, chunk_size):
        S = U[start:start + chunk_size] @ G.T
        expertise[start:start + chunk_size] = np.mean(sgn * S > 0.0, axis=1)

    # independent Bernoulli(rho) keep per emitted annotation: draw the
    # binomial count per annotator, then which samples survive
    if rho >= 1.0:
        ann_annotator = np.repeat(np.arange(n), m)
        ann_sample = np.tile(np.arange(m), n)
    else:
        counts = rng.binomial(m, rho, size=n)
        ann_annotator = np.repeat(np.arange(n), counts)
        ann_sample = np.concatenate(
            [np.sort(rng.choice(m, size=c, replace=False)) for c in counts]
            or [np.empty(0, dtype=np.int64)]
        ).astype(np.int64)

    scores = np.einsum("ad,ad->a", U[ann_annotator], G[ann_sample])
    eta = _sigmoid(sgn * scores)
    golden = y[ann_sample]
    labels = np.where(eta > 0.5, golden, _wrong_labels(golden, num_classes, rng))

    aset = AnnotationSet(X, ann_sample, ann_annotator, labels, n, num_classes, y)
    truth = SyntheticGroundTruth(
        embeddings=U,
        projection=F,
        ann_sample=ann_sample,
        ann_annotator=ann_annotator,
        reliability=eta,
        expertise=expertise,
        sign_convention=sign_convention,
    )
    return aset, truth


def generate_bimodal_crowd(
    X,
    y,
    n,
    annotations_per_sample,
    levels=(0.55, 0.95),
    expert_fraction=0.5,
    seed=0,
    num_classes=None,
):
    """Crowd whose annotators are correct with a fixed per-annotator rate.

    Each annotator is an expert (``levels[1]``) with probability
    ``expert_fraction`` and a novice (``levels[0]``) otherwise. Each sample
    is labelled by ``annotations_per_sample`` distinct annotators drawn
    uniformly.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    m = X.shape[0]
    if not 1 <= annotations_per_sample <= n:
        raise ValueError("annotations_per_sample must lie in [1, n]")
    if num_classes is None:
        num_classes = max(int(y.max(initial=0)) + 1, 2)
    rng = np.random.default_rng(seed)
    is_expert = rng.random(n) < expert_fraction
    rate = np.where(is_expert, levels[1], levels[0])

    ann_sample = np.repeat(np.arange(m), annotations_per_sample)
    ann_annotator = np.concatenate(
        [rng.choice(n, size=annotations_per_sample, replace=False) for _ in range(m)]
    ).astype(np.int64)
    golden = y[ann_sample]
    correct = rng.random(golden.size) < rate[ann_annotator]
    labels = np.where(correct, golden, _wrong_labels(golden, num_classes, rng))

    aset = AnnotationSet(X, ann_sample, ann_annotator, labels, n, num_classes, y)
    truth = SyntheticGroundTruth(
        embeddings=np.zeros((n, 0)),
        projection=np.zeros((0, X.shape[1])),
        ann_sample=ann_sample,
        ann_annotator=ann_annotator,
        reliability=rate[ann_annotator],
        expertise=rate.copy(),
    )
    return aset, truth


# ---------------------------------------------------------------------------
# golden feature generators


def make_separable(m, k=10, scale=0.5, margin=0.05, seed=0, offset=0.0):
    """Features with a linear golden boundary.

    Features are uniform on ``scale * [-offset, 1 - offset]^k``; the label is
    the side of a random hyperplane through the centre. Points closer than
    ``margin`` (in units of ``scale``) to the plane are redrawn, so the
    classes are separated by a gap. ``offset=0`` keeps features nonnegative.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=k)
    w /= np.linalg.norm(w)
    centre = np.full(k, 0.5)
    rows = []
    total = 0
    while total < m:
        Z = rng.random((2 * (m - total) + 16, k))
        dist = (Z - centre) @ w
        Z = Z[np.abs(dist) >= margin]
        rows.append(Z)
        total += Z.shape[0]
    Z = np.concatenate(rows)[:m]
    y = ((Z - centre) @ w > 0).astype(np.int64)
    return scale * (Z - offset), y


def make_xor(m, k=10, scale=0.5, margin=0.05, seed=0, offset=0.0):
    """Nonnegative features labelled by the XOR of two coordinate halves.

    The label is ``[z0 > 0.5] xor [z1 > 0.5]``; the remaining ``k - 2``
    coordinates are uninformative. No linear classifier beats chance by
    more than a little on this layout.
    """
    if k < 2:
        raise ValueError("XOR needs k >= 2")
    rng = np.random.default_rng(seed)
    rows = []
    total = 0
    while total < m:
        Z = rng.random((2 * (m - total) + 16, k))
        keep = (np.abs(Z[:, 0] - 0.5) >= margin) & (np.abs(Z[:, 1] - 0.5) >= margin)
        Z = Z[keep]
        rows.append(Z)
        total += Z.shape[0]
    Z = np.concatenate(rows)[:m]
    y = ((Z[:, 0] > 0.5) ^ (Z[:, 1] > 0.5)).astype(np.int64)
    return scale * (Z - offset), y


GOLDEN_GENERATORS = {"separable": make_separable, "xor": make_xor}
