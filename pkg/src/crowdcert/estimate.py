"""Oracle-free parameter estimates: anchor-point T, noisy class frequencies, prior recovery.

Convention: a class prior nu mixes through T as ``P(noisy = j) = sum_i nu_i T[i, j]``,
i.e. ``nu_noisy = T.T @ nu``. The two orientations agree for symmetric T.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import AnnotationSet, TransitionMatrix, as_transition_matrix
from .errors import EmptyDataset, MissingClassAnchors, SingularMatrix

SINGULAR_TOL = 1e-8


@dataclass(frozen=True)
class ConditionReport:
    lambda_min: float
    clipped: bool
    asymmetric: bool
    raw_solution: tuple
    notes: tuple = ()


@dataclass(frozen=True, eq=False)
class EstimatedParams:
    """Estimated shared matrix, noisy label frequencies and recovered prior.

    ``epsilon`` bounds the spectral-norm error of ``t_hat`` with probability
    at least ``1 - gamma``; both are assumptions supplied by the caller.
    """

    t_hat: TransitionMatrix
    nu_noisy_hat: np.ndarray
    nu_tilde: np.ndarray
    epsilon: float
    gamma: float
    report: ConditionReport | None = None

    def __post_init__(self):
        nn = np.asarray(self.nu_noisy_hat, float)
        nt = np.asarray(self.nu_tilde, float)
        if abs(nn.sum() - 1.0) > 1e-12:
            raise ValueError("nu_noisy_hat must sum to 1")
        if abs(nt.sum() - 1.0) > 1e-9:
            raise ValueError("nu_tilde must sum to 1")
        if self.epsilon < 0 or not 0 <= self.gamma <= 1:
            raise ValueError("need epsilon >= 0 and gamma in [0, 1]")
        object.__setattr__(self, "nu_noisy_hat", nn)
        object.__setattr__(self, "nu_tilde", nt)

    @property
    def clipped(self) -> bool:
        return bool(self.report and self.report.clipped)


def anchor_estimate_t(data: AnnotationSet, anchors: Mapping | np.ndarray) -> TransitionMatrix:
    """Shared T from anchor tasks: entry (i, j) is the fraction of annotations j
    among all annotations on anchors whose gold label is i.

    ``anchors`` maps task_id -> gold class, or is an array aligned with
    ``data.task_ids`` holding -1 for non-anchor tasks.
    """
    C = data.num_classes
    if isinstance(anchors, Mapping):
        gold = np.full(data.n_tasks, -1, dtype=np.int64)
        pos = {tid: i for i, tid in enumerate(data.task_ids)}
        for tid, c in anchors.items():
            if tid in pos:
                gold[pos[tid]] = int(c)
    else:
        gold = np.asarray(anchors, dtype=np.int64)
    g = gold[data.task_index]
    keep = g >= 0
    counts = np.zeros((C, C))
    np.add.at(counts, (g[keep], data.labels[keep]), 1.0)
    totals = counts.sum(axis=1)
    if np.any(totals == 0):
        missing = [int(c) for c in np.flatnonzero(totals == 0)]
        raise MissingClassAnchors(f"no annotated anchors with gold class {missing}")
    return TransitionMatrix(counts / totals[:, None])


def empirical_noisy_prior(data: AnnotationSet) -> np.ndarray:
    """Class frequencies over every stored annotation."""
    if data.n_annotations == 0:
        raise EmptyDataset("no annotations")
    freq = np.bincount(data.labels, minlength=data.num_classes).astype(float)
    return freq / freq.sum()


def smallest_singular_value(t) -> float:
    return float(np.linalg.svd(as_transition_matrix(t).entries, compute_uv=False).min())


def mix_prior(t, nu) -> np.ndarray:
    """Forward model: distribution of a noisy label given true prior ``nu``."""
    return as_transition_matrix(t).entries.T @ np.asarray(nu, float)


def recover_prior(t_hat, nu_noisy_hat) -> tuple[np.ndarray, ConditionReport]:
    """Invert the mixture, clip to [0, 1], renormalise, and report conditioning."""
    t = as_transition_matrix(t_hat).entries
    lam = smallest_singular_value(t)
    if lam <= SINGULAR_TOL:
        raise SingularMatrix(f"smallest singular value {lam:.3g} <= {SINGULAR_TOL}")
    raw = np.linalg.solve(t.T, np.asarray(nu_noisy_hat, float))
    clipped = bool(np.any(raw < 0.0) or np.any(raw > 1.0))
    nu = np.clip(raw, 0.0, 1.0)
    nu = nu / nu.sum()
    notes = []
    if clipped:
        notes.append(f"recovered prior {raw.tolist()} left the simplex and was clipped")
    asym = not np.allclose(t, t.T, atol=1e-12)
    if asym:
        notes.append("T_hat is asymmetric; the prior is recovered as solve(T_hat.T, nu_noisy)")
    return nu, ConditionReport(lam, clipped, asym, tuple(raw.tolist()), tuple(notes))


def estimate_params(data: AnnotationSet, anchors, epsilon: float, gamma: float) -> EstimatedParams:
    """Anchor T, empirical noisy frequencies and recovered prior in one bundle."""
    t_hat = anchor_estimate_t(data, anchors)
    nu_noisy = empirical_noisy_prior(data)
    nu_tilde, report = recover_prior(t_hat, nu_noisy)
    return EstimatedParams(t_hat, nu_noisy, nu_tilde, epsilon, gamma, report)
