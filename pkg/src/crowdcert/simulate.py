"""Seeded synthetic annotation generators and parameter-grid sweeps.

Randomness comes from numpy's Philox counter-based generator. A seed is an
int or a tuple of ints; each generator draws labels from stream 0 of that
seed and any auxiliary quantities (perturbations) from stream 1, so e.g. a
zero perturbation reproduces the fixed-T dataset bit for bit. Sweep cells use
seed ``(spec.seed, cell_index)``, which makes results independent of the
order in which workers finish.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .certify import check_one_coin, check_two_coin
from .core import AnnotationSet, TransitionMatrix, as_prior, as_transition_matrix
from .errors import CrowdCertError, InvalidParams, InvalidSplit, SigmaTooLarge, UnsupportedClassCount
from .exact import BinaryNoiseParams, _threshold_value, gap_components

Seed = int | Sequence[int]

GRID_DEGENERATE_TOL = 1e-6
MIN_MC_SAMPLES = 1000
PARALLEL_MIN_CELLS = 4000
PERTURB_DIRECTION = np.array([[-1.0, 1.0], [1.0, -1.0]])


def make_rng(seed: Seed, stream: int = 0) -> np.random.Generator:
    key = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    if any(k < 0 for k in key):
        raise InvalidParams("seeds must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key + [stream])))


def _draw_gold(rng, nu: np.ndarray, N: int) -> np.ndarray:
    cum = np.cumsum(nu)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.random(N), side="right").astype(np.int64)


def _draw_votes(rng, y: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """(N, H) labels; annotator h reports from row y of ``mats[h]``."""
    H, C, _ = mats.shape
    cum = np.cumsum(mats, axis=2)
    cum[..., -1] = 1.0
    u = rng.random((y.shape[0], H))
    row_cum = cum[np.arange(H)[None, :], y[:, None]]  # (N, H, C)
    return np.minimum((u[..., None] >= row_cum).sum(axis=2), C - 1).astype(np.int64)


def _to_annotation_set(votes: np.ndarray, y: np.ndarray, C: int) -> AnnotationSet:
    N, H = votes.shape
    return AnnotationSet.from_arrays(
        np.repeat(np.arange(N), H), np.tile(np.arange(H), N), votes.ravel(), C, gold=y)


def _simulate(N: int, prior, mats: np.ndarray, seed: Seed):
    if N < 1:
        raise InvalidParams(f"N must be positive, got {N}")
    prior = as_prior(prior)
    if prior.num_classes != mats.shape[1]:
        raise InvalidParams("prior and transition matrices disagree on the number of classes")
    rng = make_rng(seed, 0)
    y = _draw_gold(rng, prior.probs, N)
    return y, _draw_votes(rng, y, mats)


def gen_fixed(N: int, prior, t, H: int, seed: Seed) -> AnnotationSet:
    """N tasks with gold drawn from ``prior``; H annotators all report through ``t``."""
    t = as_transition_matrix(t)
    if H < 1:
        raise InvalidParams(f"H must be positive, got {H}")
    mats = np.repeat(t.entries[None], H, axis=0)
    y, votes = _simulate(N, prior, mats, seed)
    return _to_annotation_set(votes, y, t.num_classes)


def perturbed_matrices(t, H: int, sigma: float, seed: Seed) -> list[TransitionMatrix]:
    """T_h = T + s_h * [[-1, 1], [1, -1]] with s_h ~ U[-sigma, sigma]."""
    t = as_transition_matrix(t)
    if t.num_classes != 2:
        raise UnsupportedClassCount("perturbation is defined for binary T")
    if sigma < 0:
        raise InvalidParams("sigma must be non-negative")
    room = float(np.minimum(t.entries, 1.0 - t.entries).min())
    if sigma > 0 and sigma >= room:
        raise SigmaTooLarge(f"sigma = {sigma} must stay below {room}, the closest entry distance to 0 or 1")
    s = make_rng(seed, 1).uniform(-sigma, sigma, size=H) if sigma > 0 else np.zeros(H)
    return [TransitionMatrix(t.entries + sh * PERTURB_DIRECTION) for sh in s]


def gen_perturbed(N: int, prior, t, H: int, sigma: float, seed: Seed):
    """Like :func:`gen_fixed` with one uniformly perturbed matrix per annotator.

    Returns ``(data, realized_matrices)``.
    """
    mats = perturbed_matrices(t, H, sigma, seed)
    y, votes = _simulate(N, prior, np.stack([m.entries for m in mats]), seed)
    return _to_annotation_set(votes, y, 2), mats


def check_split(size_a: int, size_b: int) -> int:
    H = size_a + size_b
    if size_a < 0 or size_b < 0 or H % 2 == 0:
        raise InvalidSplit(f"group sizes {size_a} + {size_b} must be non-negative with an odd total")
    if size_a >= (H + 1) // 2:
        raise InvalidSplit(f"group A ({size_a}) must be smaller than ceil(H/2) = {(H + 1) // 2}")
    return H


def gen_two_groups(N: int, prior, t_a, t_b, size_a: int, size_b: int, seed: Seed) -> AnnotationSet:
    """Annotators 0..size_a-1 report through ``t_a``, the rest through ``t_b``."""
    check_split(size_a, size_b)
    t_a, t_b = as_transition_matrix(t_a), as_transition_matrix(t_b)
    mats = np.stack([t_a.entries] * size_a + [t_b.entries] * size_b)
    y, votes = _simulate(N, prior, mats, seed)
    return _to_annotation_set(votes, y, t_a.num_classes)


def group_matrices(t_a, t_b, size_a: int, size_b: int) -> list[TransitionMatrix]:
    t_a, t_b = as_transition_matrix(t_a), as_transition_matrix(t_b)
    return [t_a] * size_a + [t_b] * size_b


def _vote_matrix(data: AnnotationSet) -> np.ndarray:
    """Dense (n_tasks, H) labels for a fully annotated set (every task sees every annotator)."""
    out = np.full((data.n_tasks, data.n_annotators), -1, dtype=np.int64)
    out[data.task_index, data.annotator_index] = data.labels
    if np.any(out < 0):
        raise InvalidParams("dataset is not fully annotated")
    return out


def _mv_map_correct(votes: np.ndarray, y: np.ndarray, mats: np.ndarray, nu: np.ndarray):
    """Per-task correctness of MV and of MAP with the given (true) parameters."""
    H = votes.shape[1]
    C = mats.shape[1]
    counts = np.stack([(votes == c).sum(axis=1) for c in range(C)], axis=1)
    mv = counts.argmax(axis=1)
    with np.errstate(divide="ignore"):
        logm = np.log(mats)
        lognu = np.log(nu)
    # scores[n, c] = log nu_c + sum_h log mats[h, c, votes[n, h]]
    per = logm[np.arange(H)[None, :], :, votes]  # (N, H, C)
    scores = lognu[None, :] + per.sum(axis=1)
    mp = scores.argmax(axis=1)
    return mv == y, mp == y


@dataclass(frozen=True)
class Accuracy:
    mv: float
    map: float
    n: int

    @property
    def gap(self) -> float:
        return self.map - self.mv

    def se(self, which: str = "mv") -> float:
        return binomial_se(getattr(self, which), self.n)


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def empirical_accuracies(data: AnnotationSet, matrices, prior) -> Accuracy:
    """MV accuracy and MAP accuracy under the supplied true per-annotator matrices."""
    if data.gold is None:
        raise InvalidParams("dataset carries no gold labels")
    votes = _vote_matrix(data)
    if isinstance(matrices, (TransitionMatrix, np.ndarray)) and np.ndim(getattr(matrices, "entries", matrices)) == 2:
        matrices = [matrices] * data.n_annotators
    mats = np.stack([as_transition_matrix(m).entries for m in matrices])
    mv, mp = _mv_map_correct(votes, np.asarray(data.gold), mats, as_prior(prior).probs)
    return Accuracy(float(mv.mean()), float(mp.mean()), int(votes.shape[0]))


class SweepMode(str, enum.Enum):
    ANALYTIC = "ANALYTIC"
    MONTE_CARLO = "MONTE_CARLO"


def _sorted_tuple(vals, name, lo, hi):
    v = tuple(float(x) for x in vals)
    if not v:
        raise InvalidParams(f"{name} must be non-empty")
    if list(v) != sorted(v):
        raise InvalidParams(f"{name} must be sorted")
    if not all(lo < x < hi for x in v):
        raise InvalidParams(f"{name} entries must lie in ({lo}, {hi})")
    return v


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian grid over (nu0, t00, t11, H).

    ``one_coin`` ties t11 to t00 and ignores ``t11_values``.
    ``estimate`` additionally re-runs the two-coin check on parameters
    estimated from a simulated dataset of ``n_samples`` tasks, using the
    first ``anchor_fraction`` of tasks as gold anchors.
    """

    nu0_values: tuple
    t00_values: tuple
    t11_values: tuple = ()
    h_values: tuple = (3,)
    mode: SweepMode = SweepMode.ANALYTIC
    n_samples: int = 0
    seed: int = 0
    one_coin: bool = False
    estimate: bool = False
    anchor_fraction: float = 0.1

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("mode", SweepMode(self.mode))
        set_("nu0_values", _sorted_tuple(self.nu0_values, "nu0_values", 0.0, 1.0))
        set_("t00_values", _sorted_tuple(self.t00_values, "t00_values", 0.5, 1.0))
        if self.one_coin:
            set_("t11_values", ())
        else:
            set_("t11_values", _sorted_tuple(self.t11_values, "t11_values", 0.5, 1.0))
        hs = tuple(int(h) for h in self.h_values)
        if not hs or any(h < 1 or h % 2 == 0 for h in hs):
            raise InvalidParams("h_values must be non-empty odd positive integers")
        set_("h_values", hs)
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise InvalidParams("seed must be a 64-bit unsigned integer")
        needs_samples = self.mode is SweepMode.MONTE_CARLO or self.estimate
        if needs_samples and self.n_samples < MIN_MC_SAMPLES:
            raise InvalidParams(f"n_samples must be >= {MIN_MC_SAMPLES} for simulated cells")
        if not 0.0 < self.anchor_fraction < 1.0:
            raise InvalidParams("anchor_fraction must lie in (0, 1)")

    def points(self):
        idx = 0
        for nu0 in self.nu0_values:
            for t00 in self.t00_values:
                for t11 in ((t00,) if self.one_coin else self.t11_values):
                    for H in self.h_values:
                        yield idx, nu0, t00, t11, H
                        idx += 1

    @property
    def n_cells(self) -> int:
        n_t11 = 1 if self.one_coin else len(self.t11_values)
        return len(self.nu0_values) * len(self.t00_values) * n_t11 * len(self.h_values)

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["mode"] = self.mode.value
        for k in ("nu0_values", "t00_values", "t11_values", "h_values"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class SweepCell:
    nu0: float
    t00: float
    t11: float
    H: int
    gap: float | None
    verdict: str | None
    degenerate: bool
    empirical_mv: float | None = None
    empirical_map: float | None = None
    estimated_verdict: str | None = None
    error: str = ""


@dataclass(frozen=True)
class SweepGrid:
    spec: SweepSpec
    cells: tuple

    def __post_init__(self):
        if len(self.cells) != self.spec.n_cells:
            raise ValueError("grid must hold one cell per grid point")
        if any(c.gap is not None and c.gap < -1e-12 for c in self.cells):
            raise ValueError("negative gap in grid")

    @property
    def n_errors(self) -> int:
        return sum(1 for c in self.cells if c.error)

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)


def _is_grid_degenerate(H, t00, t11, nu0) -> bool:
    a0 = _threshold_value(H, t00, t11, nu0, 1.0 - nu0)
    return abs(a0 - round(a0)) <= GRID_DEGENERATE_TOL


def _estimated_verdict(votes, y, H, n_anchor) -> str:
    anchors_y, anchors_v = y[:n_anchor], votes[:n_anchor]
    t_hat = np.zeros((2, 2))
    for c in (0, 1):
        rows = anchors_v[anchors_y == c]
        if rows.size == 0:
            raise CrowdCertError(f"no anchors of class {c}")
        t_hat[c, 1] = rows.mean()
        t_hat[c, 0] = 1.0 - t_hat[c, 1]
    nu_noisy = np.array([1.0 - votes.mean(), votes.mean()])
    from .estimate import recover_prior
    nu, _ = recover_prior(TransitionMatrix(t_hat), nu_noisy)
    if not 0.0 < nu[0] < 1.0:
        raise CrowdCertError("recovered prior is on the simplex boundary")
    return check_two_coin((H, float(t_hat[0, 0]), float(t_hat[1, 1]), float(nu[0]))).verdict.value


def evaluate_cell(spec: SweepSpec, idx: int, nu0: float, t00: float, t11: float, H: int) -> SweepCell:
    errors = []
    gap = verdict = None
    emv = emap = est = None
    try:
        degenerate = _is_grid_degenerate(H, t00, t11, nu0)
        gap = gap_components(H, t00, t11, nu0)[2]
        if spec.one_coin:
            # strict flip < nu0 < 1 - flip, so exact boundary points are never optimal
            verdict = check_one_coin(1.0 - t00, nu0).verdict.value
        else:
            verdict = check_two_coin(BinaryNoiseParams(H, t00, t11, nu0)).verdict.value
    except (CrowdCertError, AssertionError, ValueError) as exc:
        degenerate = False
        errors.append(f"{type(exc).__name__}: {exc}")
    if not errors and (spec.mode is SweepMode.MONTE_CARLO or spec.estimate):
        mats = np.repeat(np.array([[t00, 1 - t00], [1 - t11, t11]])[None], H, axis=0)
        nu = np.array([nu0, 1 - nu0])
        rng = make_rng((spec.seed, idx), 0)
        y = _draw_gold(rng, nu, spec.n_samples)
        votes = _draw_votes(rng, y, mats)
        if spec.mode is SweepMode.MONTE_CARLO:
            mv, mp = _mv_map_correct(votes, y, mats, nu)
            emv, emap = float(mv.mean()), float(mp.mean())
        if spec.estimate:
            try:
                est = _estimated_verdict(votes, y, H, max(1, math.ceil(spec.anchor_fraction * spec.n_samples)))
            except (CrowdCertError, AssertionError) as exc:
                errors.append(f"estimated {type(exc).__name__}: {exc}")
    return SweepCell(nu0, t00, t11, H, gap, verdict, degenerate, emv, emap, est, "; ".join(errors))


def _evaluate_chunk(spec: SweepSpec, points: list) -> list:
    return [evaluate_cell(spec, *p) for p in points]


def worker_count(n_cells: int) -> int:
    cap = os.environ.get("CROWDCERT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, n_cells // PARALLEL_MIN_CELLS if n_cells >= PARALLEL_MIN_CELLS else 1))


def sweep(spec: SweepSpec, workers: int | None = None) -> SweepGrid:
    """Evaluate every grid cell; per-cell failures land in the cell's ``error`` field."""
    pts = list(spec.points())
    heavy = spec.mode is SweepMode.MONTE_CARLO or spec.estimate
    if workers is None:
        workers = worker_count(len(pts) * (50 if heavy else 1))
    if workers <= 1:
        cells = _evaluate_chunk(spec, pts)
    else:
        size = math.ceil(len(pts) / (4 * workers))
        chunks = [pts[i:i + size] for i in range(0, len(pts), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_evaluate_chunk, [spec] * len(chunks), chunks))
        cells = [c for part in parts for c in part]
    return SweepGrid(spec, tuple(cells))
