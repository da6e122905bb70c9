"""Optimality certificates for majority vote on binary tasks.

All checks compare the prior odds g = nu_1/nu_0 against the band
(f, h) = (delta_0/delta_1)^(H/2) * rho^(-1/2, +1/2), evaluated in log space
for c = 0. The mirrored c = 1 band is the reciprocal one and is checked as
a consistency assertion.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass

from .core import TransitionMatrix, as_prior, as_transition_matrix
from .errors import (
    AdversarialNoise,
    BoundUndefined,
    DegenerateThreshold,
    GroupTooLarge,
    InvalidParams,
    PreconditionViolated,
    RhoMismatch,
    SingularMatrix,
    UnsupportedClassCount,
)
from .estimate import SINGULAR_TOL, EstimatedParams, smallest_singular_value
from .exact import BinaryNoiseParams, map_threshold

SLACK = 1e-12
RHO_REL_TOL = 1e-6

CONFIDENCE_NOTE = ("confidence = 1 - 2*gamma - 2*exp(-2*eps^2*N), the union bound of the "
                   "T-estimate failure and the DKW deviation of the noisy frequencies")
SIGMA_NOTE = "fractional distance of A_c to the nearest integer: min(frac, 1 - frac)"


class Verdict(str, enum.Enum):
    MV_OPTIMAL = "MV_OPTIMAL"
    MV_SUBOPTIMAL = "MV_SUBOPTIMAL"
    CERTIFIED_OPTIMAL_WHP = "CERTIFIED_OPTIMAL_WHP"
    INCONCLUSIVE = "INCONCLUSIVE"


class DegenerateThresholdWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Certificate:
    verdict: Verdict
    f_bound: float
    g_value: float
    h_bound: float
    log_f: float
    log_g: float
    log_h: float
    psi: float | None = None
    chi: float | None = None
    confidence: float | None = None
    notes: tuple = ()
    check: str = ""

    def __post_init__(self):
        if self.verdict is Verdict.CERTIFIED_OPTIMAL_WHP and self.confidence is None:
            raise ValueError("a high-probability certificate needs a confidence")
        if self.verdict in (Verdict.MV_OPTIMAL, Verdict.MV_SUBOPTIMAL) and self.log_f > self.log_h:
            raise ValueError("f bound exceeds h bound")

    @property
    def optimal(self) -> bool:
        return self.verdict in (Verdict.MV_OPTIMAL, Verdict.CERTIFIED_OPTIMAL_WHP)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        d["notes"] = list(self.notes)
        return d


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _log_binary_terms(H: int, t00: float, t11: float):
    """(log delta_0, log delta_1, log rho) for a binary matrix."""
    ld0 = math.log(t00) - math.log1p(-t11)
    ld1 = math.log(t11) - math.log1p(-t00)
    return ld0, ld1, ld0 + ld1


def _log_band(H: int, t00: float, t11: float, c: int = 0):
    """(log f, log h) of the optimality band for class c."""
    ld0, ld1, lr = _log_binary_terms(H, t00, t11)
    ratio = ld0 - ld1 if c == 0 else ld1 - ld0
    base = 0.5 * H * ratio
    return base - 0.5 * lr, base + 0.5 * lr


def _coerce(H, t00, t11, nu0) -> BinaryNoiseParams:
    if t00 <= 0.5 or t11 <= 0.5:
        raise AdversarialNoise(f"need T00, T11 > 0.5 (got {t00}, {t11})")
    return BinaryNoiseParams(H, t00, t11, nu0)


def _inside(lo, x, hi, strict_hi=True):
    return lo < x and (x < hi if strict_hi else x <= hi)


def _slack_notes(log_f, log_g, log_h) -> list:
    d = min(abs(log_g - log_f), abs(log_h - log_g))
    if d <= SLACK:
        return [f"prior odds lie within {SLACK:g} of a band edge; strict comparison applied"]
    return []


def check_one_coin(rho_flip: float, nu0: float) -> Certificate:
    """Symmetric flip probability: MV is optimal iff flip < nu0 < 1 - flip, for every H."""
    if rho_flip >= 0.5:
        raise AdversarialNoise(f"flip probability must be below 0.5, got {rho_flip}")
    if not 0.0 < rho_flip:
        raise InvalidParams(f"flip probability must be positive, got {rho_flip}")
    if not 0.0 < nu0 < 1.0:
        raise InvalidParams(f"nu0 must lie in (0, 1), got {nu0}")
    ok = rho_flip < nu0 < 1.0 - rho_flip
    log_odds = math.log1p(-rho_flip) - math.log(rho_flip)
    log_g = math.log1p(-nu0) - math.log(nu0)
    notes = []
    if min(abs(nu0 - rho_flip), abs(nu0 - (1.0 - rho_flip))) <= SLACK:
        notes.append(f"nu0 lies within {SLACK:g} of the flip-probability boundary")
    return Certificate(
        Verdict.MV_OPTIMAL if ok else Verdict.MV_SUBOPTIMAL,
        _exp(-log_odds), _exp(log_g), _exp(log_odds), -log_odds, log_g, log_odds,
        notes=tuple(notes), check="one-coin",
    )


def check_two_coin(params: BinaryNoiseParams | tuple) -> Certificate:
    """Two-parameter noise: MV is optimal iff f(T) < nu_1/nu_0 < h(T).

    ``params`` is a :class:`BinaryNoiseParams` or an ``(H, t00, t11, nu0)`` tuple.
    """
    if not isinstance(params, BinaryNoiseParams):
        params = _coerce(*params)
    H, t00, t11, nu0 = params.H, params.t00, params.t11, params.nu0
    log_f, log_h = _log_band(H, t00, t11, 0)
    log_g = math.log(params.nu1) - math.log(nu0)
    ok0 = _inside(log_f, log_g, log_h)
    lf1, lh1 = _log_band(H, t00, t11, 1)
    ok1 = _inside(lf1, -log_g, lh1)
    notes = _slack_notes(log_f, log_g, log_h)
    if ok0 != ok1 and not notes:
        raise AssertionError("class-0 and class-1 optimality checks disagree")
    for c in (0, 1):
        if map_threshold(params, c).degenerate:
            notes.append(f"A_{c} is an integer; MAP is tied at that vote count")
    return Certificate(
        Verdict.MV_OPTIMAL if ok0 else Verdict.MV_SUBOPTIMAL,
        _exp(log_f), _exp(log_g), _exp(log_h), log_f, log_g, log_h,
        notes=tuple(notes), check="two-coin",
    )


def optimality_margins(eps: float, lam_min: float, C: int, eta: float, xi: float, H: int):
    """(psi, chi) margins absorbing prior-recovery error and bound-function Lipschitz constants."""
    if eps == 0:
        psi = 0.0
    elif lam_min <= eps:
        psi = math.inf
    else:
        psi = (eps / lam_min) * (1.0 / (lam_min - eps) + math.sqrt(C)) / min(eta, 1.0 - eta) ** 2
    chi = math.hypot(max(0.5, (H - 1) / 2 - H * xi), max(0.5, (H + 1) / 2 - xi * H))
    return psi, chi


def check_estimated(est: EstimatedParams, H: int, eta: float, xi: float, N: int) -> Certificate:
    """High-probability optimality certificate from estimated (T, nu).

    One-sided: when either margin inequality fails the verdict is
    INCONCLUSIVE, never a suboptimality claim.
    """
    t = est.t_hat.entries
    C = t.shape[0]
    if C != 2:
        raise UnsupportedClassCount(f"certificates cover binary tasks only, got C={C}")
    if H < 1 or H % 2 == 0:
        raise InvalidParams(f"H must be odd and positive, got {H}")
    if not (0 < eta < 1 and 0 < xi < 1):
        raise InvalidParams("eta and xi must lie in (0, 1)")
    if est.clipped:
        raise PreconditionViolated("recovered prior was clipped into the simplex; refusing to certify")
    t00, t11 = float(t[0, 0]), float(t[1, 1])
    for name, v in (("T00", t00), ("T11", t11)):
        if not 0.5 < v <= 1.0 - xi:
            raise PreconditionViolated(f"estimated {name} = {v} outside (0.5, 1 - xi = {1 - xi}]")
    nu = est.nu_tilde
    for c in (0, 1):
        if not eta <= nu[c] <= 1.0 - eta:
            raise PreconditionViolated(f"recovered nu_{c} = {nu[c]} outside [eta, 1 - eta] = [{eta}, {1 - eta}]")
    lam = smallest_singular_value(est.t_hat)
    if lam <= SINGULAR_TOL:
        raise SingularMatrix(f"smallest singular value of T_hat is {lam:.3g}")

    eps = est.epsilon
    psi, chi = optimality_margins(eps, lam, C, eta, xi, H)
    log_f, log_h = _log_band(H, t00, t11, 0)
    log_g = math.log(nu[1]) - math.log(nu[0])
    f, g, h = _exp(log_f), _exp(log_g), _exp(log_h)
    notes = [CONFIDENCE_NOTE]
    if math.isinf(psi):
        notes.append(f"lambda_min(T_hat) = {lam:.6g} <= epsilon; prior-recovery margin unbounded")
    lower_ok = g - f > psi + eps * chi
    upper_ok = h - g > psi + 4.0 * eps * chi
    conf = 1.0 - 2.0 * est.gamma - 2.0 * math.exp(-2.0 * eps * eps * N)
    if not 0.0 <= conf <= 1.0:
        notes.append(f"raw confidence {conf:.6g} clamped to [0, 1]")
        conf = min(max(conf, 0.0), 1.0)
    if lower_ok and upper_ok:
        verdict = Verdict.CERTIFIED_OPTIMAL_WHP
    else:
        verdict = Verdict.INCONCLUSIVE
        if not lower_ok:
            notes.append(f"g - f = {g - f:.6g} does not exceed psi + eps*chi = {psi + eps * chi:.6g}")
        if not upper_ok:
            notes.append(f"h - g = {h - g:.6g} does not exceed psi + 4*eps*chi = {psi + 4 * eps * chi:.6g}")
    return Certificate(verdict, f, g, h, log_f, log_g, log_h, psi=psi, chi=chi,
                       confidence=conf, notes=tuple(notes), check="estimated")


def emap_gap_bound(epsilon: float, H: int, nu0: float, oracle_gap: float) -> float:
    """Upper bound on |P(eMAP correct) - P(MV correct)| for a T estimate within epsilon."""
    if epsilon < 0 or nu0 <= 0 or oracle_gap < 0:
        raise InvalidParams("need epsilon >= 0, nu0 > 0, oracle_gap >= 0")
    return 2.0 * epsilon * H * (1.0 + epsilon) ** (H - 1) / nu0 + oracle_gap


def sigma_bound(params: BinaryNoiseParams, c: int, strict: bool = False) -> float:
    """Largest half-width of per-annotator uniform perturbations that keeps
    expected MV and oMAP recovery equal, for class c.

    An integer A_c gives 0 with a :class:`DegenerateThresholdWarning`
    (``strict=True`` raises :class:`DegenerateThreshold` instead).
    """
    thr = map_threshold(params, c)
    if thr.degenerate:
        if strict:
            raise DegenerateThreshold(f"A_{c} = {thr.value!r} is an integer")
        warnings.warn(f"A_{c} is an integer; perturbation bound is 0", DegenerateThresholdWarning,
                      stacklevel=2)
        return 0.0
    t = params.matrix()
    o = 1 - c
    r = 1.0 / (2.0 / t[o, o] + 2.0 / t[c, o] + 1.0 / t[c, c] + 1.0 / t[o, c])
    frac = thr.value - math.floor(thr.value)
    return params.log_rho / params.H * r * min(frac, 1.0 - frac)


def sigma_bound_all(params: BinaryNoiseParams) -> float:
    """The bound holding for both classes at once."""
    return min(sigma_bound(params, 0), sigma_bound(params, 1))


def _binary_diag(t: TransitionMatrix, name: str):
    e = t.entries
    if e.shape != (2, 2):
        raise UnsupportedClassCount(f"{name} must be 2x2")
    t00, t11 = float(e[0, 0]), float(e[1, 1])
    if t00 <= 0.5 or t11 <= 0.5:
        raise AdversarialNoise(f"{name} diagonals must exceed 0.5 (got {t00}, {t11})")
    return t00, t11


def check_two_groups(H: int, size_a: int, t_a, t_b, prior) -> Certificate:
    """MV optimality for two annotator groups with equal odds products rho_A = rho_B.

    Group A (``size_a`` annotators) must be a strict minority; group B holds
    the remaining ``H - size_a``. The upper comparison is non-strict.
    """
    if H < 1 or H % 2 == 0:
        raise InvalidParams(f"H must be odd and positive, got {H}")
    if not 0 <= size_a < (H + 1) // 2:
        raise GroupTooLarge(f"group A size {size_a} must be below ceil(H/2) = {(H + 1) // 2}")
    prior = as_prior(prior)
    if prior.num_classes != 2:
        raise UnsupportedClassCount("two-group check covers binary tasks only")
    a00, a11 = _binary_diag(as_transition_matrix(t_a), "T_A")
    b00, b11 = _binary_diag(as_transition_matrix(t_b), "T_B")
    la0, la1, lra = _log_binary_terms(H, a00, a11)
    lb0, lb1, lrb = _log_binary_terms(H, b00, b11)
    rho_a, rho_b = math.exp(lra), math.exp(lrb)
    if abs(rho_a - rho_b) / rho_b >= RHO_REL_TOL:
        raise RhoMismatch(f"rho_A = {rho_a:.6g} differs from rho_B = {rho_b:.6g}")
    nu0 = float(prior.probs[0])
    if not 0.0 < nu0 < 1.0:
        raise InvalidParams("prior must be interior")

    def band(c):
        ldb_c, ldb_o = (lb0, lb1) if c == 0 else (lb1, lb0)
        lda_o = la1 if c == 0 else la0
        base = 0.5 * H * (ldb_c - ldb_o) + size_a * (ldb_o - lda_o)
        return base - 0.5 * lrb, base + 0.5 * lrb

    log_f, log_h = band(0)
    log_g = math.log1p(-nu0) - math.log(nu0)
    ok = _inside(log_f, log_g, log_h, strict_hi=False)
    lf1, lh1 = band(1)
    ok1 = _inside(lf1, -log_g, lh1, strict_hi=False)
    notes = _slack_notes(log_f, log_g, log_h)
    if ok != ok1 and not notes:
        raise AssertionError("class-0 and class-1 two-group checks disagree")
    return Certificate(
        Verdict.MV_OPTIMAL if ok else Verdict.MV_SUBOPTIMAL,
        _exp(log_f), _exp(log_g), _exp(log_h), log_f, log_g, log_h,
        notes=tuple(notes), check="two-groups",
    )


def nu_error_bound(t_tilde, epsilon: float, C: int) -> float:
    """Bound on ||nu - nu_tilde||_2 given ||T - T_tilde||_2 <= epsilon."""
    lam = smallest_singular_value(t_tilde)
    if epsilon == 0:
        return 0.0
    if lam <= epsilon + 1e-12:
        raise BoundUndefined(f"lambda_min(T_tilde) = {lam:.6g} does not exceed epsilon = {epsilon}")
    return (epsilon / lam) * (1.0 / (lam - epsilon) + math.sqrt(C))
