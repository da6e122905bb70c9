"""Closed-form recovery probabilities for MV and oracle MAP under shared binary noise.

With H conditionally independent annotators sharing the matrix T, the number
of votes for the true class c is Binomial(H, T_cc). Majority vote recovers c
when at least ceil(H/2) votes agree; oracle MAP recovers c when the count
exceeds the real threshold A_c. Both reduce to binomial tails, evaluated here
in log space so that H in the hundreds is safe.

The :func:`brute_force_oracle` enumerates every vote pattern instead and is
kept independent of the closed forms so the two can check each other.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateThreshold,
    EvenH,
    InvalidParams,
    InvalidRange,
    TooManyAnnotators,
)

DEGENERATE_TOL = 1e-9
GAP_CLAMP = 1e-14
MAX_ORACLE_H = 15
MAX_RULE_ENUM_H = 4


@dataclass(frozen=True)
class BinaryNoiseParams:
    """Shared two-coin noise model: H annotators, diagonals t00/t11, prior P(y=0)=nu0."""

    H: int
    t00: float
    t11: float
    nu0: float

    def __post_init__(self):
        if int(self.H) != self.H or self.H < 1 or self.H % 2 == 0:
            raise InvalidParams(f"H must be an odd positive integer, got {self.H}")
        for name in ("t00", "t11"):
            v = getattr(self, name)
            if not 0.5 < v < 1.0:
                raise InvalidParams(f"{name} must lie in (0.5, 1), got {v}")
        if not 0.0 < self.nu0 < 1.0:
            raise InvalidParams(f"nu0 must lie in (0, 1), got {self.nu0}")
        object.__setattr__(self, "H", int(self.H))

    @property
    def nu1(self) -> float:
        return 1.0 - self.nu0

    def diag(self, c: int) -> float:
        return self.t00 if c == 0 else self.t11

    def prior(self, c: int) -> float:
        return self.nu0 if c == 0 else self.nu1

    @property
    def rho(self) -> float:
        return self.t00 * self.t11 / ((1.0 - self.t00) * (1.0 - self.t11))

    @property
    def log_rho(self) -> float:
        return (math.log(self.t00) + math.log(self.t11)
                - math.log1p(-self.t00) - math.log1p(-self.t11))

    def delta(self, c: int) -> float:
        """T_cc / (1 - T_{c'c'}) where c' is the other class."""
        return self.diag(c) / (1.0 - self.diag(1 - c))

    def log_delta(self, c: int) -> float:
        return math.log(self.diag(c)) - math.log1p(-self.diag(1 - c))

    def matrix(self) -> np.ndarray:
        return np.array([[self.t00, 1.0 - self.t00], [1.0 - self.t11, self.t11]])


class MapThreshold(NamedTuple):
    value: float
    degenerate: bool


class OracleResult(NamedTuple):
    p_mv: float
    p_map: float
    map_is_best_rule: bool | None
    mv_diag: tuple
    map_diag: tuple


def _log_binom_pmf(H: int, i: int, logp: float, log1mp: float) -> float:
    return (math.lgamma(H + 1) - math.lgamma(i + 1) - math.lgamma(H - i + 1)
            + i * logp + (H - i) * log1mp)


def binom_tail(H: int, p: float, k0: int) -> float:
    """P(Binomial(H, p) >= k0), summed from max-shifted log-space terms."""
    if H < 0 or not 0 <= k0 <= H + 1:
        raise InvalidRange(f"need 0 <= k0 <= H + 1, got H={H}, k0={k0}")
    if not 0.0 <= p <= 1.0:
        raise InvalidRange(f"p must lie in [0, 1], got {p}")
    if k0 == 0:
        return 1.0
    if k0 == H + 1:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    logp, log1mp = math.log(p), math.log1p(-p)
    terms = [_log_binom_pmf(H, i, logp, log1mp) for i in range(k0, H + 1)]
    top = max(terms)
    total = math.exp(top) * math.fsum(math.exp(t - top) for t in terms)
    return min(1.0, total)


def _check_odd(H: int):
    if H < 1 or H % 2 == 0:
        raise EvenH(f"H must be odd and positive, got {H}")


def mv_diag(H: int, t_cc: float) -> float:
    """P(MV returns c | y = c): at least ceil(H/2) of H votes correct."""
    _check_odd(H)
    return binom_tail(H, t_cc, (H + 1) // 2)


def _threshold_value(H: int, t_cc: float, t_oo: float, nu_c: float, nu_o: float) -> float:
    log_rho = math.log(t_cc) + math.log(t_oo) - math.log1p(-t_cc) - math.log1p(-t_oo)
    num = math.log(nu_o) - math.log(nu_c) + H * (math.log(t_oo) - math.log1p(-t_cc))
    return num / log_rho


def _is_degenerate(a: float, tol: float = DEGENERATE_TOL) -> bool:
    return abs(a - round(a)) <= tol


def map_threshold(params: BinaryNoiseParams, c: int) -> MapThreshold:
    """Real vote-count threshold A_c above which oracle MAP declares class c."""
    a = _threshold_value(params.H, params.diag(c), params.diag(1 - c),
                         params.prior(c), params.prior(1 - c))
    return MapThreshold(a, _is_degenerate(a))


def _clamped_start(a: float, H: int) -> int:
    return int(min(max(math.floor(a + 1.0), 0), H + 1))


def omap_diag(params: BinaryNoiseParams, c: int) -> float:
    """P(oracle MAP returns c | y = c)."""
    thr = map_threshold(params, c)
    if thr.degenerate:
        raise DegenerateThreshold(f"A_{c} = {thr.value!r} is an integer; MAP tie is undefined")
    return binom_tail(params.H, params.diag(c), _clamped_start(thr.value, params.H))


def success_probability(t00_agg: float, t11_agg: float, nu0: float) -> float:
    """Overall recovery probability nu0*T00 + (1-nu0)*T11 of an aggregator."""
    return nu0 * t00_agg + (1.0 - nu0) * t11_agg


def _tail_shift(H: int, p: float, k_new: int, k_ref: int) -> float:
    """binom_tail(H, p, k_new) - binom_tail(H, p, k_ref) from the pmf terms in between."""
    if k_new == k_ref:
        return 0.0
    lo, hi = sorted((k_new, k_ref))
    if p in (0.0, 1.0):
        return binom_tail(H, p, k_new) - binom_tail(H, p, k_ref)
    logp, log1mp = math.log(p), math.log1p(-p)
    mass = math.fsum(math.exp(_log_binom_pmf(H, i, logp, log1mp)) for i in range(lo, hi))
    return mass if k_new < k_ref else -mass


def gap(params: BinaryNoiseParams) -> float:
    """P(oMAP correct) - P(MV correct); non-negative, float noise clamped to 0.

    Only the binomial terms between the MV and MAP thresholds are summed, so
    the result is exactly 0 whenever the thresholds coincide.
    """
    H, half = params.H, (params.H + 1) // 2
    starts = []
    for c in (0, 1):
        thr = map_threshold(params, c)
        if thr.degenerate:
            raise DegenerateThreshold(f"A_{c} = {thr.value!r} is an integer; MAP tie is undefined")
        starts.append(_clamped_start(thr.value, H))
    g = (params.nu0 * _tail_shift(H, params.t00, starts[0], half)
         + params.nu1 * _tail_shift(H, params.t11, starts[1], half))
    if -GAP_CLAMP <= g < GAP_CLAMP:
        return 0.0
    return g


def gap_components(H: int, t00: float, t11: float, nu0: float) -> tuple[float, float, float, bool]:
    """(p_mv, p_omap, gap, degenerate) without raising on integer thresholds.

    At an integer threshold the posterior is tied for that vote count and
    either decision has the same success probability, so the count is sent
    to class 1 consistently for both classes. Accepts any diagonals in (0, 1)
    with positive log-odds product, which the sweeps and perturbed settings use.
    """
    a0 = _threshold_value(H, t00, t11, nu0, 1.0 - nu0)
    k0 = _clamped_start(a0, H)
    k1 = H + 1 - k0
    half = (H + 1) // 2
    p_mv = success_probability(binom_tail(H, t00, half), binom_tail(H, t11, half), nu0)
    g = nu0 * _tail_shift(H, t00, k0, half) + (1.0 - nu0) * _tail_shift(H, t11, k1, half)
    if -GAP_CLAMP <= g < GAP_CLAMP:
        g = 0.0
    return p_mv, p_mv + g, g, _is_degenerate(a0)


@lru_cache(maxsize=None)
def _vote_patterns(H: int) -> np.ndarray:
    pats = np.array(list(itertools.product((0, 1), repeat=H)), dtype=np.int64)
    pats.setflags(write=False)
    return pats


def pattern_likelihoods(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """(2, 2**H) array of P(vote pattern | y = c) for per-annotator binary matrices."""
    H = len(matrices)
    pats = _vote_patterns(H)
    lik = np.ones((2, pats.shape[0]))
    for h, t in enumerate(matrices):
        t = np.asarray(t, float)
        for c in (0, 1):
            lik[c] *= t[c, pats[:, h]]
    return lik


def enumerate_recovery(matrices: Sequence[np.ndarray], nu0: float) -> dict:
    """Exhaustive per-class recovery probabilities of MV and MAP.

    ``matrices`` holds one 2x2 transition matrix per annotator. MV breaks
    ties toward class 0; MAP picks the larger of nu_c * P(x | c), ties
    toward class 0.
    """
    H = len(matrices)
    if H > MAX_ORACLE_H:
        raise TooManyAnnotators(f"enumeration supports H <= {MAX_ORACLE_H}, got {H}")
    pats = _vote_patterns(H)
    lik = pattern_likelihoods(matrices)
    ones = pats.sum(axis=1)
    mv_pred = (2 * ones > H).astype(np.int64)
    post0, post1 = nu0 * lik[0], (1.0 - nu0) * lik[1]
    map_pred = (post1 > post0).astype(np.int64)

    def per_class(pred):
        return (float(math.fsum(lik[0][pred == 0])), float(math.fsum(lik[1][pred == 1])))

    return {"mv": per_class(mv_pred), "map": per_class(map_pred), "lik": lik}


def best_rule_success(lik: np.ndarray, nu0: float) -> float:
    """Best success probability over all 2**(2**H) deterministic rules, by enumeration."""
    n_pat = lik.shape[1]
    # rule r maps pattern j to bit j of r
    rules = ((np.arange(2 ** n_pat)[:, None] >> np.arange(n_pat)[None, :]) & 1).astype(bool)
    gain0 = nu0 * lik[0]
    gain1 = (1.0 - nu0) * lik[1]
    success = np.where(rules, gain1[None, :], gain0[None, :]).sum(axis=1)
    return float(success.max())


def brute_force_oracle(params: BinaryNoiseParams) -> OracleResult:
    """Enumerate all 2**H vote patterns to get MV and MAP success probabilities.

    For H <= 4 every deterministic decision rule is also enumerated and
    ``map_is_best_rule`` reports whether none beats MAP (within 1e-12);
    otherwise it is ``None``.
    """
    H = params.H
    if H > MAX_ORACLE_H:
        raise TooManyAnnotators(f"enumeration supports H <= {MAX_ORACLE_H}, got {H}")
    t = params.matrix()
    res = enumerate_recovery([t] * H, params.nu0)
    p_mv = success_probability(*res["mv"], params.nu0)
    p_map = success_probability(*res["map"], params.nu0)
    best = None
    if H <= MAX_RULE_ENUM_H:
        best = bool(best_rule_success(res["lik"], params.nu0) <= p_map + 1e-12)
    return OracleResult(p_mv, p_map, best, res["mv"], res["map"])
