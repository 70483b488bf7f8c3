"""Command-line experiment driver.

Every subcommand reads one YAML config, materialises all defaults into a
``manifest.json`` inside ``--out`` and writes its outputs there. Nothing
written depends on wall-clock time, so rerunning a manifest reproduces the
metrics files byte for byte.

Exit codes: 0 success, 1 invalid config or input data, 2 runtime failure.
"""

import argparse
import copy
import csv
import hashlib
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__, em
from .active import Strategy, run_simulation, write_audit, write_round_metrics
from .baselines import SparseReliabilityModel, logistic_config
from .bayesian_net import BayesianClassifier, NetworkConfig
from .dataset import AnnotationFormatError, AnnotationSet, load_annotations, save_annotations
from .metrics import accuracy, auc
from .recovery import recovery_metrics
from .seeding import subseed
from .synthetic import (
    GOLDEN_GENERATORS,
    SIGN_CONVENTIONS,
    SyntheticGroundTruth,
    generate_bimodal_crowd,
    generate_synthetic,
)
from .validation import check_fraction, check_positive_int
from .voting import majority_vote

METHODS = ("mv", "dlc_lr", "dlc_sparse", "dlc")
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# config handling


def _section(raw, name, defaults):
    """Merge ``raw[name]`` over ``defaults``, rejecting unknown keys."""
    given = raw.get(name) or {}
    if not isinstance(given, dict):
        raise ConfigError(name, "must be a mapping")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown field")
    out = dict(defaults)
    out.update(given)
    return out


def _dataclass_defaults(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


def _build(cls, section_name, values, **extra):
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        for key in values:
            if key in msg:
                raise ConfigError(f"{section_name}.{key}", msg) from None
        raise ConfigError(section_name, msg) from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return raw


def _resolve_seed(raw, override):
    seed = raw.get("seed", 0) if override is None else override
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"must be a nonnegative integer, got {seed!r}")
    return seed


def _check_keys(raw, allowed):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")


NETWORK_DEFAULTS = _dataclass_defaults(NetworkConfig, skip=("input_dim", "num_classes"))
NETWORK_DEFAULTS["hidden_sizes"] = list(NETWORK_DEFAULTS["hidden_sizes"])
LFTC_DEFAULTS = _dataclass_defaults(em.LftcConfig)
EM_DEFAULTS = _dataclass_defaults(em.EmConfig, skip=("seed",))


def _model_sections(raw):
    net = _section(raw, "network", NETWORK_DEFAULTS)
    lftc = _section(raw, "lftc", LFTC_DEFAULTS)
    emc = _section(raw, "em", EM_DEFAULTS)
    if lftc["sign_convention"] not in SIGN_CONVENTIONS:
        raise ConfigError("lftc.sign_convention", f"must be one of {SIGN_CONVENTIONS}")
    return net, lftc, emc


def _configs(net, lftc, emc, aset, seed):
    net_cfg = _build(NetworkConfig, "network", net, input_dim=aset.num_features,
                     num_classes=aset.num_classes)
    return net_cfg, _build(em.LftcConfig, "lftc", lftc), _build(em.EmConfig, "em", emc, seed=seed)


def _data_path(data, key, required=True):
    p = data.get(key)
    if p is None:
        if required:
            raise ConfigError(f"data.{key}", "required")
        return None
    path = Path(p)
    if not path.exists():
        raise ConfigError(f"data.{key}", f"file not found: {p}")
    return path


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out, command, config, seed, inputs=()):
    write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
    })


def _require_outputs(out, names):
    missing = [n for n in names if not (out / n).is_file()]
    if missing:
        raise RuntimeError(f"outputs not written: {', '.join(missing)}")


# ---------------------------------------------------------------------------
# synth

GOLDEN_DEFAULTS = {"generator": "separable", "num_samples": 5000, "num_features": 10,
                   "scale": 0.6, "margin": 0.05, "offset": 0.0, "eval_samples": 0}
CROWD_DEFAULTS = {"kind": "lowrank", "num_annotators": 5000, "latent_dim": 10, "rho": 0.001,
                  "embed_low": -0.3, "embed_high": 0.6, "sign_convention": "eq6_negative",
                  "annotations_per_sample": 5, "levels": [0.55, 0.95], "expert_fraction": 0.5}


def _histogram(values, bins=10):
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return [{"low": float(lo), "high": float(hi), "count": int(c)}
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def cmd_synth(raw, out, seed):
    """Simulate a crowd over golden samples."""
    _check_keys(raw, {"golden", "crowd", "seed"})
    golden = _section(raw, "golden", GOLDEN_DEFAULTS)
    crowd = _section(raw, "crowd", CROWD_DEFAULTS)
    if golden["generator"] not in GOLDEN_GENERATORS:
        raise ConfigError("golden.generator", f"must be one of {sorted(GOLDEN_GENERATORS)}")
    m = _check(check_positive_int, golden, "golden", "num_samples")
    k = _check(check_positive_int, golden, "golden", "num_features")
    n_eval = golden["eval_samples"]
    if not isinstance(n_eval, int) or n_eval < 0:
        raise ConfigError("golden.eval_samples", "must be a nonnegative integer")
    n = _check(check_positive_int, crowd, "crowd", "num_annotators")
    if crowd["kind"] not in ("lowrank", "bimodal"):
        raise ConfigError("crowd.kind", "must be 'lowrank' or 'bimodal'")

    X, y = GOLDEN_GENERATORS[golden["generator"]](
        m + n_eval, k, scale=golden["scale"], margin=golden["margin"],
        seed=subseed(seed, "golden"), offset=golden["offset"])
    Xp, yp = X[:m], y[:m]
    truth = None
    if crowd["kind"] == "lowrank":
        rho = _check(check_fraction, crowd, "crowd", "rho")
        d = _check(check_positive_int, crowd, "crowd", "latent_dim")
        if crowd["sign_convention"] not in SIGN_CONVENTIONS:
            raise ConfigError("crowd.sign_convention", f"must be one of {SIGN_CONVENTIONS}")
        if not crowd["embed_low"] < crowd["embed_high"]:
            raise ConfigError("crowd.embed_low", "must be below crowd.embed_high")
        aset, truth = generate_synthetic(
            Xp, yp, n, d, rho, crowd["embed_low"], crowd["embed_high"],
            seed=subseed(seed, "synth"), sign_convention=crowd["sign_convention"])
    else:
        aps = _check(check_positive_int, crowd, "crowd", "annotations_per_sample")
        if aps > n:
            raise ConfigError("crowd.annotations_per_sample", "exceeds crowd.num_annotators")
        levels = crowd["levels"]
        if not (isinstance(levels, list) and len(levels) == 2):
            raise ConfigError("crowd.levels", "must be a list of two reliabilities")
        for lv in levels:
            _check(check_fraction, {"levels": lv}, "crowd", "levels")
        frac = crowd["expert_fraction"]
        if not 0.0 <= frac <= 1.0:
            raise ConfigError("crowd.expert_fraction", "must lie in [0, 1]")
        aset, truth = generate_bimodal_crowd(Xp, yp, n, aps, tuple(levels), frac,
                                             seed=subseed(seed, "synth"))

    out.mkdir(parents=True, exist_ok=True)
    config = {"golden": golden, "crowd": crowd}
    save_annotations(aset, out / "annotations.jsonl")
    truth.save(out / "truth.json")
    outputs = ["annotations.jsonl", "truth.json", "summary.json", "manifest.json"]
    if n_eval:
        ev = AnnotationSet(X[m:], [], [], [], n, aset.num_classes, y[m:])
        save_annotations(ev, out / "eval.jsonl")
        outputs.append("eval.jsonl")
    summary = {
        "num_samples": aset.num_samples,
        "num_annotators": aset.num_annotators,
        "num_annotations": aset.num_annotations,
        "sparsity": aset.sparsity,
        "reliability_mean": float(np.mean(truth.reliability)) if truth.reliability.size else None,
        "reliability_histogram": _histogram(truth.reliability),
        "annotation_accuracy": float(np.mean(aset.ann_label == aset.golden[aset.ann_sample]))
        if aset.num_annotations else None,
    }
    write_json(out / "summary.json", summary)
    write_manifest(out, "synth", config, seed)
    _require_outputs(out, outputs)
    print(f"sparsity {summary['sparsity']:.6f}, {aset.num_annotations} annotations, "
          f"reliability mean {summary['reliability_mean']:.4f}")
    for b in summary["reliability_histogram"]:
        print(f"  [{b['low']:.1f}, {b['high']:.1f}) {b['count']}")
    return summary


def _check(fn, section, name, key):
    try:
        return fn(section[key], key)
    except ValueError as exc:
        raise ConfigError(f"{name}.{key}", str(exc)) from None


# ---------------------------------------------------------------------------
# train


def _load_set(path, key):
    try:
        return load_annotations(path)
    except (AnnotationFormatError, ValueError) as exc:
        raise ConfigError(f"data.{key}", str(exc)) from None


def _load_truth(path):
    if path is None:
        return None
    try:
        return SyntheticGroundTruth.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("data.truth", f"unreadable ground truth: {exc}") from None


def _fit_method(method, aset, net_cfg, lftc_cfg, em_cfg, callback=None):
    if method == "mv":
        post = majority_vote(aset)
        labels = em.initial_posteriors(aset, em_cfg.seed).argmax(axis=1)
        state = em.EmState(None, None, post)
        return state, labels
    model = None
    if method == "dlc_sparse":
        model = SparseReliabilityModel.initialize(aset.num_annotators, lam=lftc_cfg.lam)
    if method == "dlc_lr":
        net_cfg = logistic_config(net_cfg)
    state = em.fit(aset, net_cfg, lftc_cfg, em_cfg, annotator_model=model, callback=callback)
    return state, state.labels


def _checkpoint(directory, state):
    directory.mkdir(parents=True, exist_ok=True)
    state.classifier.save(directory / "classifier.json")
    state.annotator_model.save(directory / "annotator_model.json")


def _eval_classifier(classifier, ev, T, seed):
    if classifier is None or ev is None:
        return {}
    probs = classifier.predict_proba(ev.features, T=T, seed=seed)
    out = {"eval_accuracy": accuracy(probs.argmax(axis=1), ev.golden)}
    try:
        out["eval_auc"] = auc(probs, ev.golden)
    except ValueError:
        out["eval_auc"] = None
    return out


def train_run(raw, out, seed, method, net, lftc, emc, data, write=True):
    """Fit one method; returns the metrics dict. Shared by train and grid."""
    aset = _load_set(_data_path(data, "annotations"), "annotations")
    truth = _load_truth(_data_path(data, "truth", required=False))
    ev_path = _data_path(data, "eval", required=False)
    ev = _load_set(ev_path, "eval") if ev_path else None
    if ev is not None and ev.num_features != aset.num_features:
        raise ConfigError("data.eval", "feature dimension differs from the training set")
    net_cfg, lftc_cfg, em_cfg = _configs(net, lftc, emc, aset, seed)

    if write:
        out.mkdir(parents=True, exist_ok=True)
    def checkpoint_each(it, state):
        _checkpoint(out / "checkpoints" / f"iter_{it + 1:03d}", state)

    callback = checkpoint_each if write and method != "mv" else None
    state, labels = _fit_method(method, aset, net_cfg, lftc_cfg, em_cfg, callback)

    metrics = {"method": method, "num_samples": aset.num_samples,
               "num_annotations": aset.num_annotations}
    if aset.has_golden:
        known = aset.golden >= 0
        metrics["inferred_label_accuracy"] = accuracy(labels[known], aset.golden[known])
    if method != "mv":
        rec = recovery_metrics(state, aset, truth)
        rec.pop("inferred_label_accuracy", None)
        metrics.update(rec)
        metrics["em_iterations"] = state.m_steps
        metrics["converged"] = state.converged
        metrics["final_objective"] = state.objective_trace[-1] if state.objective_trace else None
        metrics.update(_eval_classifier(state.classifier, ev, em_cfg.mc_passes_T,
                                        subseed(seed, "eval")))
    if not write:
        return metrics, state, aset

    with open(out / "objective_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective", "log_likelihood"])
        for it, (obj, ll) in enumerate(zip(state.objective_trace, state.loglik_trace), 1):
            w.writerow([it, repr(obj), repr(ll)])
    with open(out / "posteriors.jsonl", "w") as fh:
        for i in range(aset.num_samples):
            fh.write(json.dumps({"sample": i, "label": int(labels[i]),
                                 "posterior": [float(p) for p in state.posteriors[i]]}) + "\n")
    if method != "mv":
        _checkpoint(out / "checkpoints" / "final", state)
    write_json(out / "metrics.json", metrics)
    return metrics, state, aset


def cmd_train(raw, out, seed):
    """Fit one aggregation method and write a run directory."""
    _check_keys(raw, {"data", "method", "network", "lftc", "em", "seed"})
    method = raw.get("method", "dlc")
    if method not in METHODS:
        raise ConfigError("method", f"must be one of {METHODS}, got {method!r}")
    data = raw.get("data") or {}
    net, lftc, emc = _model_sections(raw)
    config = {"data": data, "method": method, "network": net, "lftc": lftc, "em": emc}
    inputs = [p for p in (_data_path(data, k, k == "annotations") for k in
                          ("annotations", "truth", "eval")) if p is not None]
    metrics, _, _ = train_run(raw, out, seed, method, net, lftc, emc, data)
    write_manifest(out, "train", config, seed, inputs)
    _require_outputs(out, ["metrics.json", "objective_trace.csv", "posteriors.jsonl",
                           "manifest.json"])
    print(json.dumps(_jsonable(metrics), sort_keys=True))
    return metrics


# ---------------------------------------------------------------------------
# active

ACTIVE_DEFAULTS = {"strategies": ["dalc"], "seeds": None, "rounds": 10, "k_per_round": 500,
                   "bootstrap_fraction": 0.05, "retrain_iters": 3, "freeze_reliability": False}


def cmd_active(raw, out, seed):
    """Simulate active-learning strategies over seeds."""
    _check_keys(raw, {"data", "active", "network", "lftc", "em", "seed"})
    data = raw.get("data") or {}
    act = _section(raw, "active", ACTIVE_DEFAULTS)
    net, lftc, emc = _model_sections(raw)
    strategies = act["strategies"]
    if isinstance(strategies, str):
        strategies = [strategies]
    try:
        strategies = [Strategy.parse(s) for s in strategies]
    except ValueError as exc:
        raise ConfigError("active.strategies", str(exc)) from None
    seeds = act["seeds"] if act["seeds"] is not None else [seed]
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("active.seeds", "must be a list of nonnegative integers")
    if not isinstance(act["rounds"], int) or act["rounds"] < 0:
        raise ConfigError("active.rounds", "must be a nonnegative integer")
    _check(check_positive_int, act, "active", "k_per_round")
    _check(lambda v, k: check_fraction(v, k, high_open=True), act, "active", "bootstrap_fraction")

    ann_path, ev_path = _data_path(data, "annotations"), _data_path(data, "eval")
    aset = _load_set(ann_path, "annotations")
    ev = _load_set(ev_path, "eval")
    if ev.num_features != aset.num_features:
        raise ConfigError("data.eval", "feature dimension differs from the training set")
    if np.any(ev.golden < 0):
        raise ConfigError("data.eval", "every evaluation sample needs a golden label")

    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for strat in strategies:
        for s in seeds:
            net_cfg, lftc_cfg, em_cfg = _configs(net, lftc, emc, aset, s)
            st = run_simulation(aset, ev.features, ev.golden, strat, act["rounds"],
                                act["k_per_round"], net_cfg, lftc_cfg, em_cfg, seed=s,
                                bootstrap_fraction=act["bootstrap_fraction"],
                                retrain_iters=act["retrain_iters"],
                                freeze_reliability=act["freeze_reliability"])
            run_dir = out / strat.name.lower() / f"seed_{s}"
            run_dir.mkdir(parents=True, exist_ok=True)
            write_round_metrics(st, run_dir / "round_metrics.csv")
            write_audit(st, run_dir / "audit.jsonl")
            last = st.round_metrics[-1]
            summary.append({"strategy": strat.name.lower(), "seed": s, "rounds": last.round,
                            "selected": last.selected, "accuracy": last.accuracy,
                            "auc": last.auc, "stopped_early": st.stopped_early})
    means = {}
    for strat in strategies:
        rows = [r for r in summary if r["strategy"] == strat.name.lower()]
        means[strat.name.lower()] = {
            "final_accuracy_mean": float(np.mean([r["accuracy"] for r in rows])),
            "final_auc_mean": float(np.mean([r["auc"] for r in rows])),
        }
    write_json(out / "summary.json", {"runs": summary, "means": means})
    config = {"data": data, "active": {**act, "strategies": [s.name.lower() for s in strategies],
                                       "seeds": seeds},
              "network": net, "lftc": lftc, "em": emc}
    write_manifest(out, "active", config, seed, [ann_path, ev_path])
    _require_outputs(out, ["summary.json", "manifest.json"])
    for name, m in means.items():
        print(f"{name}: final accuracy {m['final_accuracy_mean']:.4f}, "
              f"auc {m['final_auc_mean']:.4f}")
    return means


# ---------------------------------------------------------------------------
# grid

GRID_KEYS = {"learning_rate": "network", "dropout_rate": "network", "hidden_sizes": "network",
             "weight_decay": "network", "lam": "lftc", "latent_dim": "lftc", "gamma": "lftc"}
SELECT_BY = ("eval_accuracy", "eval_auc", "heldout_loglik")


def _grid_cells(grid):
    keys = sorted(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, values))


def heldout_loglik(state, aset, heldout_idx, T, seed):
    """Mean predictive log-probability of held-out annotations.

    Each held-out label is scored by ``sum_c p(c | x_i) p(L_ij | c)``, with
    the classifier predictive for ``p(c | x_i)``.
    """
    held = aset.select_annotations(heldout_idx)
    probs = state.classifier.predict_proba(held.features, T=T, seed=seed)[held.ann_sample]
    eta = state.annotator_model.annotation_reliability(held)
    right, wrong = em.annotation_log_terms(eta, held.num_classes)
    p_true = probs[np.arange(held.num_annotations), held.ann_label]
    lik = p_true * np.exp(right) + (1.0 - p_true) * np.exp(wrong)
    return float(np.mean(np.log(lik)))


def _grid_cell(args):
    cell, base, seed, method, data, split = args
    net, lftc, emc = copy.deepcopy(base)
    for key, value in cell.items():
        {"network": net, "lftc": lftc}[GRID_KEYS[key]][key] = value
    aset = _load_set(Path(data["annotations"]), "annotations")
    ev = _load_set(Path(data["eval"]), "eval") if data.get("eval") else None
    train_idx, held_idx = split
    train = aset.select_annotations(train_idx)
    net_cfg, lftc_cfg, em_cfg = _configs(net, lftc, emc, aset, seed)
    state, _ = _fit_method(method, train, net_cfg, lftc_cfg, em_cfg)
    row = dict(cell)
    row.update(_eval_classifier(state.classifier, ev, em_cfg.mc_passes_T, subseed(seed, "eval")))
    if len(held_idx):
        row["heldout_loglik"] = heldout_loglik(state, aset, held_idx, em_cfg.mc_passes_T,
                                               subseed(seed, "eval"))
    if train.has_golden:
        known = train.golden >= 0
        row["inferred_label_accuracy"] = accuracy(state.labels[known], train.golden[known])
    return row


def cmd_grid(raw, out, seed):
    """Hyperparameter grid with per-cell validation metrics."""
    _check_keys(raw, {"data", "method", "grid", "validation", "network", "lftc", "em", "seed",
                      "workers"})
    method = raw.get("method", "dlc")
    if method not in ("dlc", "dlc_lr", "dlc_sparse"):
        raise ConfigError("method", "grid search needs a trained model (dlc, dlc_lr, dlc_sparse)")
    data = raw.get("data") or {}
    net, lftc, emc = _model_sections(raw)
    grid = raw.get("grid") or {}
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid", "empty grid")
    for key, values in grid.items():
        if key not in GRID_KEYS:
            raise ConfigError(f"grid.{key}", f"not a tunable field; choose from {sorted(GRID_KEYS)}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}", "must be a nonempty list")
    val = _section(raw, "validation", {"heldout_fraction": 0.0, "select_by": None})
    frac = val["heldout_fraction"]
    if not isinstance(frac, (int, float)) or not 0.0 <= frac < 1.0:
        raise ConfigError("validation.heldout_fraction", "must lie in [0, 1)")
    ann_path = _data_path(data, "annotations")
    ev_path = _data_path(data, "eval", required=False)
    if frac == 0.0 and ev_path is None:
        raise ConfigError("validation", "declare data.eval or validation.heldout_fraction > 0")
    select_by = val["select_by"] or ("heldout_loglik" if frac > 0 else "eval_accuracy")
    if select_by not in SELECT_BY:
        raise ConfigError("validation.select_by", f"must be one of {SELECT_BY}")
    if select_by == "heldout_loglik" and frac == 0.0:
        raise ConfigError("validation.select_by", "heldout_loglik needs heldout_fraction > 0")
    if select_by.startswith("eval_") and ev_path is None:
        raise ConfigError("validation.select_by", f"{select_by} needs data.eval")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers", "must be a positive integer")

    aset = _load_set(ann_path, "annotations")
    perm = np.random.default_rng(subseed(seed, "validation")).permutation(aset.num_annotations)
    n_held = int(round(frac * aset.num_annotations))
    split = (np.sort(perm[n_held:]), np.sort(perm[:n_held]))
    data = {"annotations": str(ann_path), "eval": str(ev_path) if ev_path else None}
    jobs = [(cell, (net, lftc, emc), seed, method, data, split) for cell in _grid_cells(grid)]
    if workers == 1:
        rows = [_grid_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_cell, jobs))

    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    metric_keys = sorted({k for r in rows for k in r} - set(keys))
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + metric_keys)
        for r in rows:
            w.writerow([json.dumps(_jsonable(r[k])) for k in keys]
                       + [repr(r.get(k)) for k in metric_keys])
    best = max(range(len(rows)), key=lambda i: (rows[i][select_by], -i))
    report = {"select_by": select_by, "best": rows[best], "cells": rows}
    write_json(out / "report.json", report)
    config = {"data": data, "method": method, "grid": grid, "validation":
              {"heldout_fraction": frac, "select_by": select_by},
              "network": net, "lftc": lftc, "em": emc, "workers": workers}
    write_manifest(out, "grid", config, seed, [p for p in (ann_path, ev_path) if p])
    _require_outputs(out, ["grid.csv", "report.json", "manifest.json"])
    print(f"best by {select_by}: " + json.dumps(_jsonable(rows[best]), sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# eval


def cmd_eval(raw, out, seed):
    """Score a trained run's final classifier on a labelled evaluation file."""
    _check_keys(raw, {"run", "data", "mc_passes", "seed"})
    run = raw.get("run")
    if run is None:
        raise ConfigError("run", "required")
    ckpt = Path(run) / "checkpoints" / "final" / "classifier.json"
    if not ckpt.is_file():
        raise ConfigError("run", f"no final classifier checkpoint under {run}")
    data = raw.get("data") or {}
    ev_path = _data_path(data, "eval")
    ev = _load_set(ev_path, "eval")
    if np.any(ev.golden < 0):
        raise ConfigError("data.eval", "every evaluation sample needs a golden label")
    T = raw.get("mc_passes", 20)
    if not isinstance(T, int) or T < 1:
        raise ConfigError("mc_passes", "must be a positive integer")
    clf = BayesianClassifier.load(ckpt)
    if clf.config.input_dim != ev.num_features:
        raise ConfigError("data.eval", "feature dimension differs from the trained classifier")
    metrics = _eval_classifier(clf, ev, T, subseed(seed, "eval"))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "eval_metrics.json", metrics)
    write_manifest(out, "eval", {"run": str(run), "data": data, "mc_passes": T}, seed,
                   [ckpt, ev_path])
    _require_outputs(out, ["eval_metrics.json", "manifest.json"])
    print(json.dumps(_jsonable(metrics), sort_keys=True))
    return metrics


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "active": cmd_active, "grid": cmd_grid,
            "eval": cmd_eval}


def build_parser():
    p = argparse.ArgumentParser(prog="crowdlearn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        seed = _resolve_seed(raw, args.seed)
        COMMANDS[args.command](raw, Path(args.out), seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
