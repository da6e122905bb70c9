"""Data model: annotation sets, transition matrices, class priors, results.

Everything here is immutable after construction. Arrays are stored
read-only so instances can be shared freely between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DuplicatePair,
    EmptyDataset,
    InvalidMatrix,
    LabelOutOfRange,
    MissingGold,
)

STOCHASTIC_TOL = 1e-12


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic confusion matrix, ``entries[i, j] = P(report j | true i)``."""

    entries: np.ndarray

    def __post_init__(self):
        t = _frozen(self.entries, float)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] < 1:
            raise InvalidMatrix(f"transition matrix must be square, got shape {t.shape}")
        if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0:
            raise InvalidMatrix("transition matrix entries must lie in [0, 1]")
        row_err = np.abs(t.sum(axis=1) - 1.0).max()
        if row_err > STOCHASTIC_TOL:
            raise InvalidMatrix(f"rows must sum to 1 (max deviation {row_err:.3g})")
        object.__setattr__(self, "entries", t)

    @classmethod
    def from_diag(cls, t00: float, t11: float) -> "TransitionMatrix":
        return cls(np.array([[t00, 1.0 - t00], [1.0 - t11, t11]]))

    @classmethod
    def symmetric(cls, flip: float) -> "TransitionMatrix":
        """One-coin binary matrix with flip probability ``flip``."""
        return cls.from_diag(1.0 - flip, 1.0 - flip)

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.entries).copy()

    def __getitem__(self, idx):
        return self.entries[idx]

    def __eq__(self, other):
        return isinstance(other, TransitionMatrix) and np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return f"TransitionMatrix({self.entries.tolist()})"


@dataclass(frozen=True, eq=False)
class ClassPrior:
    """Probability vector over classes."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs, float)
        if p.ndim != 1 or p.size < 1:
            raise InvalidMatrix("class prior must be a non-empty vector")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise InvalidMatrix("class prior entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > STOCHASTIC_TOL:
            raise InvalidMatrix(f"class prior must sum to 1 (got {p.sum()!r})")
        object.__setattr__(self, "probs", p)

    @classmethod
    def binary(cls, nu0: float) -> "ClassPrior":
        return cls(np.array([nu0, 1.0 - nu0]))

    @property
    def num_classes(self) -> int:
        return self.probs.size

    def __getitem__(self, idx):
        return self.probs[idx]

    def __eq__(self, other):
        return isinstance(other, ClassPrior) and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"ClassPrior({self.probs.tolist()})"


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Sparse task x annotator label matrix with optional gold labels.

    Annotations are stored as three parallel index arrays sorted by
    (task, annotator). ``gold`` is aligned with ``task_ids`` and uses -1 for
    tasks without a gold label. Build instances through
    :func:`validate_annotation_set` or :meth:`from_arrays`.
    """

    task_ids: tuple
    annotator_ids: tuple
    task_index: np.ndarray
    annotator_index: np.ndarray
    labels: np.ndarray
    num_classes: int
    gold: np.ndarray | None = None
    class_names: tuple | None = None

    @classmethod
    def from_arrays(
        cls,
        task_index,
        annotator_index,
        labels,
        num_classes: int,
        gold=None,
        task_ids: Sequence | None = None,
        annotator_ids: Sequence | None = None,
        class_names: Sequence | None = None,
    ) -> "AnnotationSet":
        """Vectorised constructor used by the simulators; fully validated."""
        t = np.asarray(task_index, dtype=np.int64).ravel()
        a = np.asarray(annotator_index, dtype=np.int64).ravel()
        y = np.asarray(labels, dtype=np.int64).ravel()
        if not (t.size == a.size == y.size):
            raise ValueError("index arrays must have equal length")
        if t.size == 0:
            raise EmptyDataset("dataset contains no annotations")
        if t.min() < 0 or a.min() < 0:
            raise ValueError("indices must be non-negative")
        n_tasks = int(t.max()) + 1
        if task_ids is not None:
            n_tasks = max(n_tasks, len(task_ids))
        if gold is not None:
            n_tasks = max(n_tasks, len(gold))
        n_annot = int(a.max()) + 1 if annotator_ids is None else max(len(annotator_ids), int(a.max()) + 1)
        if task_ids is None:
            task_ids = tuple(str(i) for i in range(n_tasks))
        if annotator_ids is None:
            annotator_ids = tuple(str(i) for i in range(n_annot))
        if len(task_ids) != n_tasks or len(annotator_ids) != n_annot:
            raise ValueError("identifier lists do not cover the index range")
        g = None
        if gold is not None:
            g = np.full(n_tasks, -1, dtype=np.int64)
            gold_arr = np.asarray(gold, dtype=np.int64)
            g[: gold_arr.size] = gold_arr
        return _validated(
            tuple(task_ids), tuple(annotator_ids), t, a, y, int(num_classes), g,
            None if class_names is None else tuple(class_names),
        )

    @property
    def n_tasks(self) -> int:
        return len(self.task_ids)

    @property
    def n_annotators(self) -> int:
        return len(self.annotator_ids)

    @property
    def n_annotations(self) -> int:
        return int(self.labels.size)

    @property
    def has_gold(self) -> bool:
        return self.gold is not None and bool(np.any(self.gold >= 0))

    def vote_counts(self, weights=None) -> np.ndarray:
        """(n_tasks, C) matrix of (optionally annotator-weighted) vote totals."""
        counts = np.zeros((self.n_tasks, self.num_classes))
        w = 1.0 if weights is None else np.asarray(weights, float)[self.annotator_index]
        np.add.at(counts, (self.task_index, self.labels), w)
        return counts

    def annotations_per_task(self) -> np.ndarray:
        return np.bincount(self.task_index, minlength=self.n_tasks)

    def gold_mapping(self) -> dict:
        if self.gold is None:
            return {}
        return {self.task_ids[i]: int(c) for i, c in enumerate(self.gold) if c >= 0}

    def records(self):
        """Yield ``(task_id, annotator_id, label)`` triples in storage order."""
        for t, a, y in zip(self.task_index, self.annotator_index, self.labels):
            yield self.task_ids[t], self.annotator_ids[a], int(y)

    def with_gold(self, gold) -> "AnnotationSet":
        """Copy with gold replaced; ``gold`` is an aligned array or a task -> class mapping."""
        if isinstance(gold, Mapping):
            g = np.full(self.n_tasks, -1, dtype=np.int64)
            pos = {tid: i for i, tid in enumerate(self.task_ids)}
            for tid, c in gold.items():
                g[pos[tid]] = c
        else:
            g = np.asarray(gold, dtype=np.int64)
        return _validated(self.task_ids, self.annotator_ids, self.task_index,
                          self.annotator_index, self.labels, self.num_classes, g,
                          self.class_names)

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        same_gold = (self.gold is None and other.gold is None) or (
            self.gold is not None and other.gold is not None
            and np.array_equal(self.gold, other.gold))
        return (
            self.task_ids == other.task_ids
            and self.annotator_ids == other.annotator_ids
            and self.num_classes == other.num_classes
            and self.class_names == other.class_names
            and np.array_equal(self.task_index, other.task_index)
            and np.array_equal(self.annotator_index, other.annotator_index)
            and np.array_equal(self.labels, other.labels)
            and same_gold
        )

    def __repr__(self):
        return (f"AnnotationSet(n_tasks={self.n_tasks}, n_annotators={self.n_annotators}, "
                f"n_annotations={self.n_annotations}, num_classes={self.num_classes}, "
                f"gold={'yes' if self.gold is not None else 'no'})")


def _validated(task_ids, annotator_ids, t, a, y, num_classes, gold, class_names) -> AnnotationSet:
    if y.size == 0:
        raise EmptyDataset("dataset contains no annotations")
    if num_classes < 1:
        raise LabelOutOfRange("num_classes must be positive")
    if y.min() < 0 or y.max() >= num_classes:
        bad = y[(y < 0) | (y >= num_classes)][0]
        raise LabelOutOfRange(f"label {bad} outside [0, {num_classes})")
    n_annot = len(annotator_ids)
    key = t * n_annot + a
    order = np.argsort(key, kind="stable")
    key = key[order]
    dup = np.flatnonzero(key[1:] == key[:-1])
    if dup.size:
        k = key[dup[0]]
        raise DuplicatePair(
            f"duplicate annotation for task {task_ids[k // n_annot]!r}, "
            f"annotator {annotator_ids[k % n_annot]!r}")
    if gold is not None:
        if gold.shape != (len(task_ids),):
            raise ValueError("gold must align with task_ids")
        known = gold[gold >= 0]
        if known.size and known.max() >= num_classes:
            raise LabelOutOfRange(f"gold label {known.max()} outside [0, {num_classes})")
        if np.any(gold < -1):
            raise LabelOutOfRange("gold labels must be class indices (or -1 for missing)")
    if class_names is not None and len(class_names) != num_classes:
        raise ValueError("class_names must have one entry per class")
    return AnnotationSet(
        task_ids=tuple(task_ids),
        annotator_ids=tuple(annotator_ids),
        task_index=_frozen(t[order], np.int64),
        annotator_index=_frozen(a[order], np.int64),
        labels=_frozen(y[order], np.int64),
        num_classes=int(num_classes),
        gold=None if gold is None else _frozen(gold, np.int64),
        class_names=class_names,
    )


def validate_annotation_set(
    raw,
    num_classes: int | None = None,
    gold: Mapping | None = None,
    class_names: Sequence | None = None,
) -> AnnotationSet:
    """Validate raw ``(task, annotator, label)`` records into an :class:`AnnotationSet`.

    Task and annotator identifiers are mapped to dense indices in order of
    first appearance (annotated tasks first, then gold-only tasks). When
    ``num_classes`` is omitted it is inferred as ``max(label) + 1`` over
    annotations and gold. Passing an existing AnnotationSet re-checks it and
    returns an equal instance.
    """
    if isinstance(raw, AnnotationSet):
        return _validated(raw.task_ids, raw.annotator_ids, np.asarray(raw.task_index),
                          np.asarray(raw.annotator_index), np.asarray(raw.labels),
                          raw.num_classes if num_classes is None else num_classes,
                          None if raw.gold is None else np.asarray(raw.gold),
                          raw.class_names)

    task_pos: dict = {}
    annot_pos: dict = {}
    t_idx, a_idx, labels = [], [], []
    for rec in raw:
        task, annot, label = rec
        t_idx.append(task_pos.setdefault(task, len(task_pos)))
        a_idx.append(annot_pos.setdefault(annot, len(annot_pos)))
        labels.append(int(label))
    if not labels:
        raise EmptyDataset("dataset contains no annotations")
    gold = dict(gold or {})
    for task in gold:
        task_pos.setdefault(task, len(task_pos))
    if num_classes is None:
        num_classes = max(max(labels), max(gold.values(), default=0)) + 1
        if class_names is not None:
            num_classes = max(num_classes, len(class_names))
    g = None
    if gold:
        g = np.full(len(task_pos), -1, dtype=np.int64)
        for task, c in gold.items():
            c = int(c)
            if c < 0 or c >= num_classes:
                raise LabelOutOfRange(f"gold label {c} for task {task!r} outside [0, {num_classes})")
            g[task_pos[task]] = c
    return _validated(
        tuple(task_pos), tuple(annot_pos),
        np.asarray(t_idx, dtype=np.int64), np.asarray(a_idx, dtype=np.int64),
        np.asarray(labels, dtype=np.int64), int(num_classes), g,
        None if class_names is None else tuple(class_names),
    )


@dataclass(frozen=True, eq=False)
class AggregationResult:
    """Per-task aggregated labels.

    ``ties`` flags tasks whose winning score was shared by several classes
    (resolved towards the lowest class index). ``metadata`` values are text.
    """

    task_ids: tuple
    labels: np.ndarray
    method_name: str
    metadata: dict = field(default_factory=dict)
    ties: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        if self.labels.shape != (len(self.task_ids),):
            raise ValueError("labels must align with task_ids")
        ties = np.zeros(len(self.task_ids), bool) if self.ties is None else self.ties
        object.__setattr__(self, "ties", _frozen(ties, bool))
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in self.metadata.items()})

    def as_dict(self) -> dict:
        return {tid: int(c) for tid, c in zip(self.task_ids, self.labels)}


def accuracy_against_gold(result: AggregationResult, gold) -> float:
    """Fraction of tasks whose aggregated label matches gold.

    ``gold`` is a task -> class mapping or an array aligned with
    ``result.task_ids`` (entries < 0 meaning unknown).
    """
    if isinstance(gold, AnnotationSet):
        gold = gold.gold
    if gold is None:
        raise MissingGold("no gold labels supplied")
    if isinstance(gold, Mapping):
        try:
            g = np.array([gold[t] for t in result.task_ids], dtype=np.int64)
        except KeyError as exc:
            raise MissingGold(f"no gold label for task {exc.args[0]!r}") from None
    else:
        g = np.asarray(gold, dtype=np.int64)
        if g.shape != result.labels.shape:
            raise MissingGold("gold array does not align with result tasks")
        if np.any(g < 0):
            raise MissingGold(f"{int(np.sum(g < 0))} tasks lack a gold label")
    if g.size == 0:
        raise MissingGold("no tasks to score")
    return float(np.mean(result.labels == g))


def as_transition_matrix(t) -> TransitionMatrix:
    return t if isinstance(t, TransitionMatrix) else TransitionMatrix(np.asarray(t, float))


def as_prior(p) -> ClassPrior:
    return p if isinstance(p, ClassPrior) else ClassPrior(np.asarray(p, float))
