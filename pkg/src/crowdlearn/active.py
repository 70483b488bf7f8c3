"""Pool-based active learning from a fixed crowd matrix.

Each round scores the candidate pool with the current classifier, picks
``k`` samples, asks one annotator per picked sample (restricted to
annotators who really labelled it, since the matrix is collected offline),
reveals those labels and retrains by a warm-started EM fit.
"""

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from . import em
from .bayesian_net import predictive_entropy
from .dataset import AnnotationSet
from .metrics import accuracy, auc
from .seeding import substream

SAMPLE_POLICIES = ("random", "entropy")
ANNOTATOR_POLICIES = ("random", "expertise")


class PoolExhaustedError(RuntimeError):
    pass


class Strategy(Enum):
    """Named (sample policy, annotator policy) pairs."""

    RD = ("random", "random")
    AD = ("random", "expertise")
    AC = ("entropy", "random")
    DALC = ("entropy", "expertise")

    @property
    def sample_policy(self):
        return self.value[0]

    @property
    def annotator_policy(self):
        return self.value[1]

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown strategy {name!r}; expected one of "
                             f"{[s.name.lower() for s in cls]}") from None


@dataclass
class RoundMetric:
    round: int
    selected: int
    accuracy: float
    auc: float


@dataclass
class ActiveLoopState:
    """Mutable state of one simulation.

    ``revealed`` holds indices into the source set's annotation arrays, so
    every revealed triple is a verbatim copy of a collected one.
    """

    source: AnnotationSet
    train_pool: List[int]
    candidate_pool: List[int]
    revealed: List[int] = field(default_factory=list)
    round_metrics: List[RoundMetric] = field(default_factory=list)
    audit: List[dict] = field(default_factory=list)
    em_state: Optional[em.EmState] = None
    stopped_early: bool = False

    @property
    def revealed_triples(self):
        s = self.source
        idx = np.asarray(self.revealed, dtype=np.int64)
        return list(zip(s.ann_sample[idx].tolist(), s.ann_annotator[idx].tolist(),
                        s.ann_label[idx].tolist()))

    def revealed_set(self):
        return self.source.select_annotations(np.asarray(self.revealed, dtype=np.int64))

    def annotations_of(self, sample_id):
        """Indices of the source annotations on ``sample_id``."""
        return np.flatnonzero(self.source.ann_sample == sample_id)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def select_samples(state, classifier, k, policy="entropy", T=20, seed=0):
    """Pick ``k`` candidates: highest MC predictive entropy, or uniformly at random.

    Entropy ties go to the lower sample id, so the order is total.
    """
    cand = np.asarray(sorted(state.candidate_pool), dtype=np.int64)
    if cand.size == 0:
        raise PoolExhaustedError("candidate pool is empty")
    if not 1 <= k <= cand.size:
        raise ValueError(f"k={k} must lie in [1, {cand.size}]")
    if policy == "random":
        picked = _rng(seed).choice(cand, size=k, replace=False)
        return [int(i) for i in picked], [None] * k
    if policy != "entropy":
        raise ValueError(f"unknown sample policy {policy!r}")
    probs = classifier.predict_proba(state.source.features[cand], T=T,
                                     seed=seed if isinstance(seed, int) else 0)
    ent = predictive_entropy(probs)
    order = np.lexsort((cand, -ent))[:k]
    return [int(i) for i in cand[order]], [float(e) for e in ent[order]]


def select_annotator(state, annotator_model, sample_id, policy="expertise", seed=0):
    """Annotator to query for ``sample_id`` among those who labelled it.

    Returns ``(annotation index, score)``; the score is the model's
    reliability for the expertise policy and ``None`` for random.
    """
    idx = state.annotations_of(sample_id)
    if idx.size == 0:
        raise LookupError(f"no annotator labelled sample {sample_id}")
    annotators = state.source.ann_annotator[idx]
    order = np.argsort(annotators, kind="stable")
    idx, annotators = idx[order], annotators[order]
    if policy == "random":
        pick = int(_rng(seed).integers(idx.size))
        return int(idx[pick]), None
    if policy != "expertise":
        raise ValueError(f"unknown annotator policy {policy!r}")
    eta = annotator_model.reliabilities(state.source.features,
                                        np.full(idx.size, sample_id), annotators)
    pick = int(np.argmax(eta))  # first maximum is the lowest id
    return int(idx[pick]), float(eta[pick])


def evaluate(classifier, X, y, T=20, seed=0):
    probs = classifier.predict_proba(X, T=T, seed=seed)
    acc = accuracy(probs.argmax(axis=1), y)
    try:
        a = auc(probs, y)
    except ValueError:
        a = float("nan")
    return acc, a


def run_simulation(
    aset,
    eval_X,
    eval_y,
    strategy,
    rounds,
    k_per_round,
    net_cfg,
    lftc_cfg=None,
    em_cfg=None,
    seed=0,
    bootstrap_fraction=0.05,
    retrain_iters=None,
    freeze_reliability=False,
):
    """Simulate ``rounds`` rounds of crowd active learning on ``aset``.

    The round-0 model is an EM fit on a seeded bootstrap subset of the pool
    with all of its collected annotations revealed. The sample and annotator
    random streams are separate, so two strategies sharing a seed see the
    same bootstrap and the same random draws where their policies coincide.
    """
    strategy = Strategy.parse(strategy)
    lftc_cfg = lftc_cfg or em.LftcConfig()
    em_cfg = replace(em_cfg or em.EmConfig(), seed=seed)
    if rounds < 0 or k_per_round < 1:
        raise ValueError("rounds must be >= 0 and k_per_round >= 1")
    if not 0.0 < bootstrap_fraction < 1.0:
        raise ValueError("bootstrap_fraction must lie in (0, 1)")
    eval_X = np.asarray(eval_X, dtype=float)
    eval_y = np.asarray(eval_y, dtype=np.int64)

    labelled = np.flatnonzero(aset.sample_counts() > 0)
    boot_rng = substream(seed, "bootstrap")
    n_boot = max(1, int(round(bootstrap_fraction * labelled.size)))
    boot = np.sort(boot_rng.choice(labelled, size=n_boot, replace=False))
    cand = np.setdiff1d(labelled, boot)
    state = ActiveLoopState(aset, boot.tolist(), cand.tolist())
    state.revealed = np.flatnonzero(np.isin(aset.ann_sample, boot)).tolist()

    state.em_state = em.fit(state.revealed_set(), net_cfg, lftc_cfg, em_cfg)
    retrain_cfg = em_cfg if retrain_iters is None else replace(em_cfg, max_iters=retrain_iters)
    if freeze_reliability:
        retrain_cfg = replace(retrain_cfg, freeze_annotators=True)

    eval_seed = int(substream(seed, "eval").integers(2**31))
    acc, a = evaluate(state.em_state.classifier, eval_X, eval_y, em_cfg.mc_passes_T, eval_seed)
    state.round_metrics.append(RoundMetric(0, 0, acc, a))

    sample_rng = substream(seed, "select_samples")
    annot_rng = substream(seed, "select_annotators")
    selected = 0
    for r in range(1, rounds + 1):
        if len(state.candidate_pool) < k_per_round:
            state.stopped_early = True
            state.audit.append({"event": "early_stop", "round": r,
                                "candidates": len(state.candidate_pool), "k": k_per_round})
            break
        mc_seed = int(sample_rng.integers(2**31))
        sample_seed = sample_rng if strategy.sample_policy == "random" else mc_seed
        picked, scores = select_samples(state, state.em_state.classifier, k_per_round,
                                        strategy.sample_policy, em_cfg.mc_passes_T, sample_seed)
        for i, s_score in zip(picked, scores):
            a_idx, a_score = select_annotator(state, state.em_state.annotator_model, i,
                                              strategy.annotator_policy, annot_rng)
            state.revealed.append(a_idx)
            state.audit.append({
                "event": "select", "round": r, "sample": i,
                "annotator": int(aset.ann_annotator[a_idx]),
                "label": int(aset.ann_label[a_idx]),
                "sample_policy": strategy.sample_policy, "sample_score": s_score,
                "annotator_policy": strategy.annotator_policy, "annotator_score": a_score,
            })
        picked_set = set(picked)
        state.candidate_pool = [c for c in state.candidate_pool if c not in picked_set]
        state.train_pool = sorted(state.train_pool + picked)
        selected += len(picked)

        state.em_state = em.fit(state.revealed_set(), net_cfg, lftc_cfg,
                                replace(retrain_cfg, seed=seed + r), state=state.em_state)
        acc, a = evaluate(state.em_state.classifier, eval_X, eval_y, em_cfg.mc_passes_T, eval_seed)
        state.round_metrics.append(RoundMetric(r, selected, acc, a))
    return state


def write_round_metrics(state, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "selected", "accuracy", "auc"])
        for m in state.round_metrics:
            w.writerow([m.round, m.selected, repr(m.accuracy), repr(m.auc)])


def write_audit(state, path):
    with open(path, "w") as fh:
        for rec in state.audit:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
