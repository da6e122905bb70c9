"""Per-task label aggregation: majority vote, MAP, Dawid-Skene EM, iterative weighted MV."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .core import AggregationResult, AnnotationSet, ClassPrior, TransitionMatrix, as_prior, as_transition_matrix
from .errors import UnannotatedTask, ZeroLikelihood

log = logging.getLogger(__name__)

LL_MONOTONE_TOL = 1e-8


@dataclass(frozen=True)
class EmConfig:
    """Loop control for the iterative aggregators.

    ``max_iters = 0`` is accepted so that IWMV can be run as plain MV.
    """

    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def _argmax_lowest(scores: np.ndarray, atol: float = 0.0):
    """Row-wise argmax breaking ties toward the lowest class; returns (labels, tie_mask)."""
    best = scores.max(axis=1, keepdims=True)
    winners = scores >= best - atol
    labels = winners.argmax(axis=1)
    ties = winners.sum(axis=1) > 1
    return labels, ties


def _require_annotated(data: AnnotationSet):
    per_task = data.annotations_per_task()
    if np.any(per_task == 0):
        missing = data.task_ids[int(np.flatnonzero(per_task == 0)[0])]
        raise UnannotatedTask(f"task {missing!r} has no annotations")


def majority_vote(data: AnnotationSet) -> AggregationResult:
    """Most voted class per task; ties go to the lowest class index and are flagged."""
    _require_annotated(data)
    labels, ties = _argmax_lowest(data.vote_counts())
    return AggregationResult(data.task_ids, labels, "mv", {"n_ties": int(ties.sum())}, ties)


def _per_annotation_log_lik(data: AnnotationSet, t) -> np.ndarray:
    """(n_annotations, C) array of log T_h[c, x] for each stored annotation."""
    C = data.num_classes
    if isinstance(t, Mapping):
        mats = [as_transition_matrix(t[a]).entries for a in data.annotator_ids]
    elif isinstance(t, (TransitionMatrix, np.ndarray)) and np.ndim(getattr(t, "entries", t)) == 2:
        mats = [as_transition_matrix(t).entries] * data.n_annotators
    else:
        mats = [as_transition_matrix(m).entries for m in t]
        if len(mats) != data.n_annotators:
            raise ValueError("need one transition matrix per annotator")
    stack = np.stack(mats)
    if stack.shape[1:] != (C, C):
        raise ValueError(f"transition matrices must be {C}x{C}")
    cols = stack[data.annotator_index, :, data.labels]
    dead = ~np.any(cols > 0, axis=1)
    if np.any(dead):
        i = int(np.flatnonzero(dead)[0])
        raise ZeroLikelihood(
            f"annotation {data.labels[i]} by {data.annotator_ids[data.annotator_index[i]]!r} "
            "has zero probability under every class")
    with np.errstate(divide="ignore"):
        return np.log(cols)


def map_aggregate(data: AnnotationSet, t, prior) -> AggregationResult:
    """Posterior argmax of log nu_c + sum_h log T_h[c, x_h].

    ``t`` is one shared TransitionMatrix, a sequence aligned with
    ``data.annotator_ids``, or a mapping annotator_id -> matrix.
    """
    prior = as_prior(prior)
    with np.errstate(divide="ignore"):
        scores = np.tile(np.log(prior.probs), (data.n_tasks, 1))
    np.add.at(scores, data.task_index, _per_annotation_log_lik(data, t))
    if np.any(np.all(np.isneginf(scores), axis=1)):
        raise ZeroLikelihood("some task has zero posterior probability for every class")
    labels, ties = _argmax_lowest(scores)
    return AggregationResult(data.task_ids, labels, "map", {"n_ties": int(ties.sum())}, ties)


def _ds_e_step(data, log_pi, log_nu):
    """Posterior responsibilities and observed-data log-likelihood."""
    scores = np.tile(log_nu, (data.n_tasks, 1))
    contrib = log_pi[data.annotator_index, :, data.labels]  # (n_annot, C)
    np.add.at(scores, data.task_index, contrib)
    norm = logsumexp(scores, axis=1, keepdims=True)
    return np.exp(scores - norm), float(norm.sum()), scores


def _ds_m_step(data, q, smoothing, prev_pi=None):
    C, A = data.num_classes, data.n_annotators
    counts = np.zeros((A, C, C))
    # counts[a, i, j] += q[task, i] for annotation (task, a, j)
    np.add.at(counts, (data.annotator_index, slice(None), data.labels), q[data.task_index])
    counts += smoothing
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = counts / totals
    empty = (totals[..., 0] == 0)
    if np.any(empty):
        # rows with no responsibility mass do not enter the EM objective; keep them
        fill = prev_pi if prev_pi is not None else np.full((A, C, C), 1.0 / C)
        pi[empty] = fill[empty]
    nu = (q.sum(axis=0) + smoothing) / (q.shape[0] + smoothing * C)
    return pi, nu


def dawid_skene_em(data: AnnotationSet, cfg: EmConfig | None = None):
    """Dawid-Skene EM with one confusion matrix per annotator.

    Initialised from soft majority-vote posteriors with one pseudo-count per
    confusion cell; later M-steps are plain maximum likelihood so the
    observed-data log-likelihood is monotone (checked every iteration).

    Returns ``(per_annotator_matrices, prior, result)`` where the matrices are
    a dict annotator_id -> TransitionMatrix.
    """
    cfg = cfg or EmConfig()
    _require_annotated(data)
    counts = data.vote_counts()
    q = counts / counts.sum(axis=1, keepdims=True)
    pi, nu = _ds_m_step(data, q, smoothing=1.0)

    def logs(pi, nu):
        with np.errstate(divide="ignore"):
            return np.log(pi), np.log(nu)

    q, ll, scores = _ds_e_step(data, *logs(pi, nu))
    history = [ll]
    delta = float("inf")
    it = 0
    while it < cfg.max_iters:
        it += 1
        new_pi, new_nu = _ds_m_step(data, q, smoothing=0.0, prev_pi=pi)
        delta = max(float(np.abs(new_pi - pi).max()), float(np.abs(new_nu - nu).max()))
        pi, nu = new_pi, new_nu
        q, ll, scores = _ds_e_step(data, *logs(pi, nu))
        if ll < history[-1] - LL_MONOTONE_TOL * max(1.0, abs(history[-1])):
            raise AssertionError(f"EM log-likelihood decreased: {history[-1]!r} -> {ll!r}")
        history.append(ll)
        if delta < cfg.tol:
            break
    labels, ties = _argmax_lowest(scores)
    matrices = {}
    for a, aid in enumerate(data.annotator_ids):
        row = pi[a] / pi[a].sum(axis=1, keepdims=True)
        matrices[aid] = TransitionMatrix(row)
    prior = ClassPrior(nu / nu.sum())
    meta = {
        "iterations": it,
        "converged": delta < cfg.tol,
        "final_delta": repr(delta),
        "log_likelihood": repr(history[-1]),
        "log_likelihood_trace": json.dumps(history),
        "n_ties": int(ties.sum()),
    }
    log.debug("dawid-skene stopped after %d iterations (delta %.3g)", it, delta)
    return matrices, prior, AggregationResult(data.task_ids, labels, "ds", meta, ties)


def iwmv_weights(data: AnnotationSet, labels: np.ndarray) -> np.ndarray:
    """Log-odds annotator weights from agreement with the current labels."""
    C = data.num_classes
    agree = (data.labels == labels[data.task_index]).astype(float)
    n = np.bincount(data.annotator_index, minlength=data.n_annotators).astype(float)
    hits = np.bincount(data.annotator_index, weights=agree, minlength=data.n_annotators)
    acc = np.divide(hits, n, out=np.full_like(n, 1.0 / C), where=n > 0)
    acc = np.clip(acc, 1.0 / C + 1e-6, 1.0 - 1e-6)
    w = np.log((C - 1) * acc / (1.0 - acc))
    return np.clip(w, -10.0, 10.0)


def iwmv(data: AnnotationSet, cfg: EmConfig | None = None) -> AggregationResult:
    """Iterative weighted majority vote; iteration 0 is plain MV."""
    cfg = cfg or EmConfig()
    res = majority_vote(data)
    labels, ties = np.asarray(res.labels), np.asarray(res.ties)
    w = np.ones(data.n_annotators)
    it, fixpoint = 0, False
    while it < cfg.max_iters:
        it += 1
        w = iwmv_weights(data, labels)
        new_labels, ties = _argmax_lowest(data.vote_counts(w))
        fixpoint = bool(np.array_equal(new_labels, labels))
        labels = new_labels
        if fixpoint:
            break
    meta = {"iterations": it, "converged": fixpoint or cfg.max_iters == 0,
            "n_ties": int(ties.sum()), "weights": json.dumps(w.tolist())}
    return AggregationResult(data.task_ids, labels, "iwmv", meta, ties)
