"""Sparse multi-annotator data model and its file formats.

An :class:`AnnotationSet` stores ``m`` samples (dense feature rows plus an
optional golden label) and a sparse list of ``(sample, annotator, label)``
triples. Storage is columnar so the numerical code can work on whole arrays.

Two on-disk formats are supported:

* ``jsonl``: one record per line, an optional ``meta`` record, then
  ``sample`` records, then ``annotation`` records.
* ``csv``: a ``sample,annotator,label`` file plus a JSON sidecar
  ``<stem>.samples.json`` holding the features, golden labels, ``n`` and ``C``.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

NO_LABEL = -1


class AnnotationFormatError(ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if lineno is not None:
                where += f":{lineno}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


class DuplicateAnnotationError(ValueError):
    pass


class DanglingIdError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    golden_label: Optional[int] = None


@dataclass(frozen=True)
class Annotation:
    sample_id: int
    annotator_id: int
    label: int


def _readonly(a):
    a.setflags(write=False)
    return a


class AnnotationSet:
    """Immutable container for samples and their sparse crowd annotations.

    Parameters
    ----------
    features : array of shape (m, k)
    ann_sample, ann_annotator, ann_label : int arrays of equal length
        The annotation triples.
    num_annotators : int
        ``n``; annotators without any annotation are allowed.
    num_classes : int
        ``C >= 2``.
    golden : int array of shape (m,), optional
        Golden labels, ``-1`` where unknown.
    """

    def __init__(
        self,
        features,
        ann_sample,
        ann_annotator,
        ann_label,
        num_annotators,
        num_classes,
        golden=None,
    ):
        features = np.array(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        m = features.shape[0]
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        if num_annotators < 0:
            raise ValueError("num_annotators must be nonnegative")

        ann_sample = np.array(ann_sample, dtype=np.int64).reshape(-1)
        ann_annotator = np.array(ann_annotator, dtype=np.int64).reshape(-1)
        ann_label = np.array(ann_label, dtype=np.int64).reshape(-1)
        if not (ann_sample.size == ann_annotator.size == ann_label.size):
            raise ValueError("annotation columns differ in length")

        if golden is None:
            golden = np.full(m, NO_LABEL, dtype=np.int64)
        golden = np.array(golden, dtype=np.int64).reshape(-1)
        if golden.size != m:
            raise ValueError("golden labels must have one entry per sample")
        if np.any((golden != NO_LABEL) & ((golden < 0) | (golden >= num_classes))):
            raise ValueError("golden label outside [0, num_classes)")

        if ann_sample.size:
            if ann_sample.min() < 0 or ann_sample.max() >= m:
                raise DanglingIdError("annotation references a sample id outside [0, m)")
            if ann_annotator.min() < 0 or ann_annotator.max() >= num_annotators:
                raise DanglingIdError(
                    "annotation references an annotator id outside [0, n)"
                )
            if ann_label.min() < 0 or ann_label.max() >= num_classes:
                raise ValueError("annotation label outside [0, num_classes)")
            key = ann_sample * max(num_annotators, 1) + ann_annotator
            uniq, counts = np.unique(key, return_counts=True)
            if np.any(counts > 1):
                bad = uniq[counts > 1][0]
                i, j = divmod(int(bad), max(num_annotators, 1))
                raise DuplicateAnnotationError(
                    f"more than one annotation for sample {i}, annotator {j}"
                )

        self.features = _readonly(features)
        self.golden = _readonly(golden)
        self.ann_sample = _readonly(ann_sample)
        self.ann_annotator = _readonly(ann_annotator)
        self.ann_label = _readonly(ann_label)
        self.num_annotators = int(num_annotators)
        self.num_classes = int(num_classes)

    @classmethod
    def from_records(cls, samples, annotations, num_annotators, num_classes, num_features=None):
        """Build a set from :class:`Sample` and :class:`Annotation` records.

        ``num_features`` only matters when ``samples`` is empty.
        """
        samples = sorted(samples, key=lambda s: s.id)
        ids = [s.id for s in samples]
        if ids != list(range(len(ids))):
            raise DanglingIdError("sample ids must be exactly 0..m-1")
        k = len(samples[0].features) if samples else (num_features or 0)
        features = np.array([s.features for s in samples], dtype=float).reshape(len(samples), k)
        golden = [NO_LABEL if s.golden_label is None else s.golden_label for s in samples]
        cols = np.array(
            [(a.sample_id, a.annotator_id, a.label) for a in annotations], dtype=np.int64
        ).reshape(-1, 3)
        return cls(features, cols[:, 0], cols[:, 1], cols[:, 2], num_annotators, num_classes, golden)

    @property
    def num_samples(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_annotations(self):
        return self.ann_sample.size

    @property
    def sparsity(self):
        cells = self.num_samples * self.num_annotators
        if cells == 0:
            return 1.0
        return 1.0 - self.num_annotations / cells

    @property
    def has_golden(self):
        return bool(np.any(self.golden != NO_LABEL))

    def samples(self) -> Iterator[Sample]:
        for i in range(self.num_samples):
            g = int(self.golden[i])
            yield Sample(i, self.features[i], None if g == NO_LABEL else g)

    def annotations(self) -> Iterator[Annotation]:
        for i, j, lab in zip(self.ann_sample, self.ann_annotator, self.ann_label):
            yield Annotation(int(i), int(j), int(lab))

    def sample_counts(self):
        """Number of annotations per sample."""
        return np.bincount(self.ann_sample, minlength=self.num_samples)

    def annotator_counts(self):
        """Number of annotations per annotator."""
        return np.bincount(self.ann_annotator, minlength=self.num_annotators)

    def label_counts(self):
        """(m, C) matrix of vote counts."""
        counts = np.zeros((self.num_samples, self.num_classes))
        np.add.at(counts, (self.ann_sample, self.ann_label), 1.0)
        return counts

    def select_annotations(self, mask_or_index):
        """New set over the same samples keeping only the chosen annotations."""
        idx = np.arange(self.num_annotations)[mask_or_index]
        return AnnotationSet(
            self.features,
            self.ann_sample[idx],
            self.ann_annotator[idx],
            self.ann_label[idx],
            self.num_annotators,
            self.num_classes,
            self.golden,
        )

    def _canonical_order(self):
        return np.lexsort((self.ann_annotator, self.ann_sample))

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        if (
            self.num_annotators != other.num_annotators
            or self.num_classes != other.num_classes
            or self.features.shape != other.features.shape
            or self.num_annotations != other.num_annotations
        ):
            return False
        a, b = self._canonical_order(), other._canonical_order()
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.golden, other.golden)
            and np.array_equal(self.ann_sample[a], other.ann_sample[b])
            and np.array_equal(self.ann_annotator[a], other.ann_annotator[b])
            and np.array_equal(self.ann_label[a], other.ann_label[b])
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"AnnotationSet(m={self.num_samples}, n={self.num_annotators}, "
            f"C={self.num_classes}, annotations={self.num_annotations}, "
            f"sparsity={self.sparsity:.6f})"
        )


# ---------------------------------------------------------------------------
# file I/O


def _infer_shape(num_annotators, num_classes, annotators, labels, goldens):
    if num_annotators is None:
        num_annotators = max(annotators, default=-1) + 1
    if num_classes is None:
        num_classes = max(max(labels, default=-1), max(goldens, default=-1)) + 1
        num_classes = max(num_classes, 2)
    return num_annotators, num_classes


def _read_jsonl(path):
    meta = {}
    samples, annotations = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "meta":
                    meta = rec
                elif kind == "sample":
                    golden = rec.get("golden")
                    samples.append(
                        Sample(int(rec["id"]), [float(v) for v in rec["features"]],
                               None if golden is None else int(golden))
                    )
                elif kind == "annotation":
                    annotations.append(
                        Annotation(int(rec["sample"]), int(rec["annotator"]), int(rec["label"]))
                    )
                else:
                    raise AnnotationFormatError(f"unknown record kind {kind!r}", path, lineno)
            except AnnotationFormatError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise AnnotationFormatError(f"bad record ({exc})", path, lineno) from exc
    return meta, samples, annotations


def _read_csv(path, samples_path):
    try:
        with open(samples_path) as fh:
            side = json.load(fh)
        samples = [
            Sample(int(s["id"]), [float(v) for v in s["features"]],
                   None if s.get("golden") is None else int(s["golden"]))
            for s in side["samples"]
        ]
    except (ValueError, KeyError, TypeError) as exc:
        raise AnnotationFormatError(f"bad samples sidecar ({exc})", samples_path) from exc
    meta = {k: side[k] for k in ("num_annotators", "num_classes", "num_features") if k in side}
    annotations = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample", "annotator", "label"]:
            raise AnnotationFormatError("expected header 'sample,annotator,label'", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j, lab = (int(v) for v in row)
            except ValueError as exc:
                raise AnnotationFormatError(f"bad row {row!r}", path, lineno) from exc
            annotations.append(Annotation(i, j, lab))
    return meta, samples, annotations


def _csv_sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".samples.json")


def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    return "csv" if Path(path).suffix.lower() == ".csv" else "jsonl"


def load_annotations(path, format=None, samples_path=None):
    """Read an :class:`AnnotationSet` from ``jsonl`` or ``csv``.

    Raises :class:`AnnotationFormatError` (with line number) on malformed
    records, :class:`DuplicateAnnotationError` for a repeated
    ``(sample, annotator)`` pair and :class:`DanglingIdError` for ids that
    point nowhere.
    """
    fmt = _infer_format(path, format)
    if fmt == "jsonl":
        meta, samples, annotations = _read_jsonl(path)
    elif fmt == "csv":
        meta, samples, annotations = _read_csv(path, samples_path or _csv_sidecar(path))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    n, c = _infer_shape(
        meta.get("num_annotators"),
        meta.get("num_classes"),
        [a.annotator_id for a in annotations],
        [a.label for a in annotations],
        [s.golden_label for s in samples if s.golden_label is not None],
    )
    return AnnotationSet.from_records(samples, annotations, n, c, meta.get("num_features"))


def save_annotations(aset, path, format=None):
    """Write ``aset`` so that :func:`load_annotations` reproduces it exactly."""
    fmt = _infer_format(path, format)
    path = Path(path)
    # repr() of a float round-trips exactly through json
    sample_recs = [
        {
            "kind": "sample",
            "id": s.id,
            "features": [float(v) for v in s.features],
            "golden": s.golden_label,
        }
        for s in aset.samples()
    ]
    if fmt == "jsonl":
        with open(path, "w") as fh:
            fh.write(json.dumps({"kind": "meta", "num_annotators": aset.num_annotators,
                                 "num_classes": aset.num_classes,
                                 "num_features": aset.num_features}) + "\n")
            for rec in sample_recs:
                fh.write(json.dumps(rec) + "\n")
            for a in aset.annotations():
                fh.write(json.dumps({"kind": "annotation", "sample": a.sample_id,
                                     "annotator": a.annotator_id, "label": a.label}) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample", "annotator", "label"])
            for a in aset.annotations():
                writer.writerow([a.sample_id, a.annotator_id, a.label])
        side = {
            "num_annotators": aset.num_annotators,
            "num_classes": aset.num_classes,
            "num_features": aset.num_features,
            "samples": [{k: r[k] for k in ("id", "features", "golden")} for r in sample_recs],
        }
        with open(_csv_sidecar(path), "w") as fh:
            json.dump(side, fh)
    else:
        raise ValueError(f"unknown format {fmt!r}")
