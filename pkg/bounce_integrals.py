#!/usr/bin/env python3
"""
Turning points and bounce integrals of the reparameterized geodesic equation.

With the normalization c = 1 a geodesic of causal character D whose
fiber part is a unit-speed geodesic of length L satisfies

    L = +-[n] integral of P (P - D)^(-1/2) dtau,        P = 1/f^2,

where the generalized integral runs back and forth between the turning
points a*(D) <= tau0 <= b*(D) at which P = D, n being the number of
bounces. The same legs with numerator 1 give the affine parameter t.

Features:
- Turning points with the exclusion rule at tau0 and tangency detection
- Singular quadrature (square-root substitution at finite ends, Taylor
  gap near the end, direct quadrature on infinite rays)
- Divergence classification at segment ends: the family power law on
  infinite tails where known, dyadic shell sums of the integrand otherwise
- Leg sums for n = 0..n_max bounces, leg-by-leg advance to a target
  arclength, and arrival lengths at a given tau for every bounce count
- Arrival scans over the K parameter with refinement at domain gaps
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from grw_errors import DomainError, PreconditionError
from solver_settings import DEFAULT_SETTINGS, SolverSettings, format_extended
from warp_function import WarpFunction, WarpSampler

logger = logging.getLogger(__name__)

TANGENT_TOL = 1e-8
TAYLOR_CUT = 1e-6
NULL_LEVEL_TOL = 1e-12

# dyadic shell test for ends without a known power law
SHELL_NODES, SHELL_WEIGHTS = np.polynomial.legendre.leggauss(16)
SHELLS_USED = 10
SHELL_RATIO_CONVERGENT = 0.9
SHELL_LOG_DECAY = 1.1

REASON_TANGENTIAL = "tangential turning point"
REASON_EXPONENT = "non-integrable exponent"
REASON_TAIL = "non-integrable tail"
REASON_ACCUMULATION = "endpoint accumulation"
REASON_BELOW = "level above warp"

ARCLENGTH = "arclength"
TIME = "time"


@dataclass(frozen=True)
class TurningPoints:
    a_star: float
    b_star: float
    tangent_at_a_star: bool = False
    tangent_at_b_star: bool = False

    @property
    def degenerate(self) -> bool:
        return self.a_star == self.b_star

    def to_dict(self) -> Dict:
        return {
            "a_star": format_extended(self.a_star),
            "b_star": format_extended(self.b_star),
            "tangent_at_a_star": self.tangent_at_a_star,
            "tangent_at_b_star": self.tangent_at_b_star,
        }


@dataclass(frozen=True)
class IntegralValue:
    """finite(value), divergent(reason) or undefined(reason)"""

    kind: str
    value: float = math.nan
    reason: Optional[str] = None

    @classmethod
    def finite(cls, value: float) -> "IntegralValue":
        return cls("finite", max(0.0, float(value)))

    @classmethod
    def divergent(cls, reason: str) -> "IntegralValue":
        return cls("divergent", math.inf, reason)

    @classmethod
    def undefined(cls, reason: str = REASON_BELOW) -> "IntegralValue":
        return cls("undefined", math.nan, reason)

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def is_divergent(self) -> bool:
        return self.kind == "divergent"

    def __add__(self, other: "IntegralValue") -> "IntegralValue":
        if self.kind == "undefined":
            return self
        if other.kind == "undefined":
            return other
        if self.is_divergent:
            return self
        if other.is_divergent:
            return other
        return IntegralValue.finite(self.value + other.value)

    def to_dict(self) -> Dict:
        data = {"kind": self.kind}
        if self.is_finite:
            data["value"] = self.value
        if self.reason:
            data["reason"] = self.reason
        return data


@dataclass
class LegSums:
    """Per-leg integrals of one (D, epsilon) geodesic from tau0"""

    tau0: float
    D: float
    epsilon: int
    turning: TurningPoints
    legs: List[IntegralValue] = field(default_factory=list)
    # visited tau values: tau0, then the end of every leg
    sequence: List[float] = field(default_factory=list)
    status: str = "complete"
    head_right: Optional[IntegralValue] = None
    head_left: Optional[IntegralValue] = None

    @property
    def cumulative(self) -> List[float]:
        total, out = 0.0, []
        for leg in self.legs:
            total += leg.value if leg.is_finite else math.inf
            out.append(total)
        return out

    @property
    def full_span(self) -> IntegralValue:
        return self.head_left + self.head_right

    def to_dict(self) -> Dict:
        return {
            "tau0": self.tau0,
            "D": self.D,
            "epsilon": self.epsilon,
            "turning_points": self.turning.to_dict(),
            "legs": [leg.to_dict() for leg in self.legs],
            "cumulative": [format_extended(v) for v in self.cumulative],
            "sequence": [format_extended(v) for v in self.sequence],
            "status": self.status,
        }


@dataclass(frozen=True)
class AdvanceResult:
    tau_end: float
    n: int
    status: str                 # "reached" | "escape"
    arclength: float            # arclength actually consumed
    direction: int              # sign of dtau/dt on the final leg
    absorbed: bool = False      # ended inside a divergent leg

    def to_dict(self) -> Dict:
        return {
            "tau_end": format_extended(self.tau_end),
            "n": self.n,
            "status": self.status,
            "arclength": self.arclength,
            "direction": self.direction,
            "absorbed": self.absorbed,
        }


# -- level helpers -----------------------------------------------------------

def _level_tol(D: float, settings: SolverSettings) -> float:
    return settings.tol_level * max(1.0, abs(D))


def _is_tangent(p: float, dp: float) -> bool:
    return abs(dp) <= TANGENT_TOL * max(abs(p), 1e-300)


def _end_state(w: WarpFunction, e: float) -> Optional[Tuple[float, float, float]]:
    """(P, P', P'') at a finite point where the warp can be evaluated."""
    if not math.isfinite(e) or not w.in_closure(e):
        return None
    with np.errstate(all='ignore'):
        state = tuple(float(v) for v in w.level_derivs(e))
    return state if all(math.isfinite(v) for v in state) else None


def is_interval_end(w: WarpFunction, tau: float) -> bool:
    return tau == w.a or tau == w.b


# -- turning points ----------------------------------------------------------

def _scan_offsets(start: float, end: float) -> np.ndarray:
    """Increasing distances from start, dense near both start and end."""
    if math.isfinite(end):
        span = abs(end - start)
        if span == 0.0:
            return np.array([])
        j = np.arange(0, 16 * 50) / 16.0
        near_start = span * np.power(2.0, -j)
        near_end = span * (1.0 - np.power(2.0, -j))
        uniform = np.linspace(0.0, span, 257)
        d = np.unique(np.concatenate([near_start, near_end, uniform]))
        return d[(d > 0) & (d < span)]
    scale = max(1.0, abs(start))
    j = np.arange(-16 * 40, 16 * 60) / 16.0
    return scale * np.power(2.0, j)


def _first_level_hit(w: WarpFunction, start: float, end: float, D: float,
                     tol: float) -> Tuple[Optional[float], bool]:
    """First tau from start towards end with P(tau) = D: (location, tangent)."""
    sign = 1.0 if end > start else -1.0
    offsets = _scan_offsets(start, end)
    if offsets.size == 0:
        return None, False
    xs = start + sign * offsets
    with np.errstate(all='ignore'):
        gap = np.asarray(w.level(xs), dtype=float) - D
    gap = np.where(np.isnan(gap), np.inf, gap)
    below = np.nonzero(gap <= 0.0)[0]
    first = int(below[0]) if below.size else len(xs)

    def g(t):
        return float(w.level(t)) - D

    # a touch (local minimum reaching the level) before the first crossing ends the leg there
    for i in range(1, min(first, len(xs) - 1)):
        if not (gap[i] <= gap[i - 1] and gap[i] <= gap[i + 1]):
            continue
        variation = abs(gap[i - 1] - gap[i]) + abs(gap[i + 1] - gap[i])
        if gap[i] > 10.0 * variation + tol:
            continue
        lo, hi = sorted((xs[i - 1], xs[i + 1]))
        res = minimize_scalar(g, bounds=(lo, hi), method='bounded', options={'xatol': 1e-14})
        if res.fun <= tol:
            return float(res.x), True

    if first == len(xs):
        return None, False
    x_hit = float(xs[first])
    if gap[first] == 0.0:
        p, dp, _ = (float(v) for v in w.level_derivs(x_hit))
        return x_hit, _is_tangent(p, dp)
    x_prev = float(xs[first - 1]) if first > 0 else start
    if g(x_prev) <= 0.0:
        return x_prev, False
    root = brentq(g, min(x_prev, x_hit), max(x_prev, x_hit), xtol=1e-14, rtol=1e-12)
    p, dp, _ = (float(v) for v in w.level_derivs(root))
    return float(root), _is_tangent(p, dp)


def turning_points(w: WarpFunction, tau0: float, D: float,
                   settings: SolverSettings = DEFAULT_SETTINGS) -> TurningPoints:
    """Turning points a*(D) <= tau0 <= b*(D) of the level D seen from tau0."""
    w.check_point(tau0, allow_ends=True)
    p0, dp0, _ = (float(v) for v in w.level_derivs(tau0))
    tol = _level_tol(D, settings)
    if p0 < D - tol:
        raise PreconditionError(f"point below level: 1/f^2({tau0}) = {p0:.12g} < D = {D:.12g}")
    if D <= 0.0:
        return TurningPoints(w.a, w.b)

    on_level = abs(p0 - D) <= tol
    if on_level and _is_tangent(p0, dp0):
        return TurningPoints(tau0, tau0, True, True)

    if on_level and dp0 < 0:
        b_star, tan_b = tau0, False
    else:
        hit, tan_b = _first_level_hit(w, tau0, w.b, D, tol)
        b_star = w.b if hit is None else hit
    if on_level and dp0 > 0:
        a_star, tan_a = tau0, False
    else:
        hit, tan_a = _first_level_hit(w, tau0, w.a, D, tol)
        a_star = w.a if hit is None else hit
    return TurningPoints(a_star, b_star, tan_a, tan_b)


# -- quadrature --------------------------------------------------------------

def _split_point(alpha: float, beta: float) -> float:
    if math.isfinite(alpha) and math.isfinite(beta):
        return 0.5 * (alpha + beta)
    if math.isfinite(alpha):
        return alpha + max(1.0, abs(alpha))
    if math.isfinite(beta):
        return beta - max(1.0, abs(beta))
    return 0.0


def _numerator(p, weight: str):
    return p if weight == ARCLENGTH else 1.0


def _gap_near(w: WarpFunction, e: float, inward: float, D: float,
              state: Optional[Tuple[float, float, float]], span: float) -> Callable[[float], Tuple[float, float]]:
    """Return dist -> (P, P - D) at tau = e + inward * dist, Taylor-expanded near e."""
    cut = TAYLOR_CUT * max(span, 1e-300)

    def evaluate(dist):
        dist = np.asarray(dist, dtype=float)
        with np.errstate(all='ignore'):
            p = np.asarray(w.level(e + inward * dist), dtype=float)
        gap = p - D
        if state is not None:
            pe, dpe, ddpe = state
            gap = np.where(dist < cut, (pe - D) + inward * dpe * dist + 0.5 * ddpe * dist * dist, gap)
        if gap.ndim == 0:
            return float(p), float(gap)
        return p, gap

    return evaluate


def _finite_piece(w: WarpFunction, e: float, other: float, D: float, weight: str,
                  settings: SolverSettings) -> float:
    """Integral from the finite end e to other, with tau = e +- s^2."""
    inward = 1.0 if other > e else -1.0
    span = abs(other - e)
    state = _end_state(w, e)
    gap_at = _gap_near(w, e, inward, D, state, span)

    def integrand(s):
        p, gap = gap_at(s * s)
        if gap <= 0.0:
            if state is not None and state[1] != 0.0:
                return 2.0 * _numerator(p, weight) / math.sqrt(abs(state[1]))
            return 0.0
        return 2.0 * s * _numerator(p, weight) / math.sqrt(gap)

    value, _ = quad(integrand, 0.0, math.sqrt(span), epsabs=settings.tol_quad,
                    epsrel=1e-10, limit=200)
    return value


def _infinite_piece(w: WarpFunction, start: float, end: float, D: float, weight: str,
                    settings: SolverSettings) -> float:
    def integrand(tau):
        with np.errstate(all='ignore'):
            p = float(w.level(tau))
        gap = p - D
        if not (gap > 0.0) or not math.isfinite(p):
            return 0.0
        return _numerator(p, weight) / math.sqrt(gap)

    lo, hi = (start, end) if end > start else (end, start)
    value, _ = quad(integrand, lo, hi, epsabs=settings.tol_quad, epsrel=1e-10, limit=200)
    return value


def _tail_power(q: float, D: float, weight: str) -> Optional[float]:
    """Exponent s of the integrand ~ |tau|^s on a tail where 1/f^2 ~ |tau|^q."""
    null = abs(D) <= NULL_LEVEL_TOL
    if q == 0.0:
        return 0.0
    if q < 0.0:
        if D > 0.0 and not null:
            return None
        if weight == ARCLENGTH:
            return 0.5 * q if null else q
        return -0.5 * q if null else 0.0
    # growing level: P - D ~ P
    return 0.5 * q if weight == ARCLENGTH else -0.5 * q


def _shells_diverge(levels: np.ndarray, sums: np.ndarray) -> bool:
    """
    Whether integrals over successive dyadic shells towards an end fail to be summable.

    levels[k] is log2 of the shell's distance scale, growing towards the end.
    Geometric decay of the shell sums means a power below -1; decay like
    levels^-beta (logarithmic factors) diverges for beta <= 1.
    """
    keep = sums > 0
    if keep.sum() < 3:
        return False
    levels, sums = levels[keep], sums[keep]
    ratio = (sums[-1] / sums[0]) ** (1.0 / (levels[-1] - levels[0]))
    if ratio < SHELL_RATIO_CONVERGENT:
        return False
    if ratio >= 1.0:
        return True
    decay = -np.polyfit(np.log(levels), np.log(sums), 1)[0]
    return decay <= SHELL_LOG_DECAY


def _shell_sums(integrand: Callable[[np.ndarray], np.ndarray], lo_exp: np.ndarray,
                scale: float) -> np.ndarray:
    """Integral of integrand(t) over [scale 2^k, scale 2^(k+1)] for each k, in log variables."""
    half = 0.5 * math.log(2.0)
    u = np.add.outer(math.log(scale) + (lo_exp + 0.5) * math.log(2.0), half * SHELL_NODES)
    t = np.exp(u)
    with np.errstate(all='ignore'):
        h = integrand(t.ravel()).reshape(t.shape)
    return half * (h * t) @ SHELL_WEIGHTS


def _end_divergence(w: WarpFunction, e: float, inner: float, D: float, weight: str) -> Optional[str]:
    """Reason code when the integrand is not integrable at the end e, else None."""
    inward = 1.0 if inner > e else -1.0
    if math.isfinite(e):
        span = abs(inner - e)
        state = _end_state(w, e)
        if state is not None and abs(state[0] - D) <= TANGENT_TOL * max(1.0, abs(D)) \
                and _is_tangent(state[0], state[1]):
            return REASON_TANGENTIAL
        gap_at = _gap_near(w, e, inward, D, state, span)

        def near(dist: np.ndarray) -> np.ndarray:
            p, gap = gap_at(dist)
            with np.errstate(all='ignore'):
                return np.where(gap > 0, _numerator(p, weight) / np.sqrt(np.where(gap > 0, gap, 1.0)), np.inf)

        # shells dist in [span 2^-(j+1), span 2^-j] closest to the end
        j = np.arange(41 - SHELLS_USED, 41, dtype=float)
        if np.any(np.isinf(near(span * np.power(2.0, -j)))):
            return REASON_EXPONENT
        sums = _shell_sums(near, -(j + 1.0), span)
        if np.any(np.isinf(sums)):
            return REASON_EXPONENT
        if not np.all(np.isfinite(sums) & (sums > 0)):
            return None
        levels = j + math.log2(max(span, 1.0) / span)
        return REASON_EXPONENT if _shells_diverge(levels, sums) else None

    scale = max(1.0, abs(inner))
    k = np.arange(41 - SHELLS_USED, 41, dtype=float)

    def far(t: np.ndarray) -> np.ndarray:
        p = np.asarray(w.level(inner - inward * t), dtype=float)
        gap = p - D
        return np.where(gap > 0, _numerator(p, weight) / np.sqrt(np.where(gap > 0, gap, 1.0)), 0.0)

    with np.errstate(all='ignore'):
        reach = far(scale * np.power(2.0, k))
    if (np.isfinite(reach) & (reach > 0)).sum() < 3:
        return None

    q = w.tail_exponent("b" if e > inner else "a")
    if q is not None:
        s = _tail_power(q, D, weight)
        if s is not None:
            logger.debug(f"tail exponent {s:.6g} from the family at {e} (D = {D:.6g}, {weight})")
            return REASON_TAIL if s >= -1.0 else None

    sums = _shell_sums(far, k, scale)
    if np.any(np.isinf(sums)):
        return REASON_TAIL
    levels = k + math.log2(scale)
    finite = np.isfinite(sums)
    return REASON_TAIL if _shells_diverge(levels[finite], sums[finite]) else None


def _integrate(w: WarpFunction, alpha: float, beta: float, D: float, weight: str,
               settings: SolverSettings) -> float:
    """Quadrature over [alpha, beta] assuming integrability."""
    if alpha == beta:
        return 0.0
    mid = _split_point(alpha, beta)
    total = 0.0
    if math.isfinite(alpha):
        total += _finite_piece(w, alpha, mid, D, weight, settings)
    else:
        total += _infinite_piece(w, mid, alpha, D, weight, settings)
    if math.isfinite(beta):
        total += _finite_piece(w, beta, mid, D, weight, settings)
    else:
        total += _infinite_piece(w, mid, beta, D, weight, settings)
    return total


def _segment(w: WarpFunction, alpha: float, beta: float, D: float, weight: str,
             settings: SolverSettings) -> IntegralValue:
    if not alpha <= beta:
        raise DomainError(f"Segment bounds out of order: {alpha} > {beta}")
    if not (w.in_closure(alpha) or alpha == w.a) or not (w.in_closure(beta) or beta == w.b):
        raise DomainError(f"Segment [{alpha}, {beta}] is outside the interval ({w.a}, {w.b})")
    if alpha == beta:
        return IntegralValue.finite(0.0)
    tol = _level_tol(D, settings)
    with np.errstate(all='ignore'):
        gaps = np.asarray(w.level(WarpSampler(alpha, beta).points(257)), dtype=float) - D
    if np.nanmin(gaps) < -tol:
        return IntegralValue.undefined(REASON_BELOW)
    mid = _split_point(alpha, beta)
    for e in (alpha, beta):
        reason = _end_divergence(w, e, mid, D, weight)
        if reason is not None:
            return IntegralValue.divergent(reason)
    return IntegralValue.finite(_integrate(w, alpha, beta, D, weight, settings))


def segment_integral(w: WarpFunction, alpha: float, beta: float, D: float,
                     settings: SolverSettings = DEFAULT_SETTINGS) -> IntegralValue:
    """Integral of P (P - D)^(-1/2) over [alpha, beta] with singular-end handling."""
    return _segment(w, alpha, beta, D, ARCLENGTH, settings)


def time_integral(w: WarpFunction, alpha: float, beta: float, D: float,
                  settings: SolverSettings = DEFAULT_SETTINGS) -> IntegralValue:
    """Affine parameter elapsed over [alpha, beta]: integral of (P - D)^(-1/2)."""
    return _segment(w, alpha, beta, D, TIME, settings)


# -- legs --------------------------------------------------------------------

def _admissible_turning(w: WarpFunction, tau0: float, D: float, epsilon: int,
                        settings: SolverSettings) -> TurningPoints:
    if epsilon not in (1, -1):
        raise DomainError(f"epsilon must be +1 or -1, got {epsilon!r}")
    tp = turning_points(w, tau0, D, settings)
    if tp.degenerate and tp.a_star == tau0 and not is_interval_end(w, tau0):
        raise PreconditionError(f"(D = {D:.12g}) is a critical level at tau0 = {tau0}: "
                                "only the constant-tau geodesic exists")
    p0, dp0, _ = (float(v) for v in w.level_derivs(tau0))
    if abs(p0 - D) <= _level_tol(D, settings) and epsilon * dp0 < 0 and not is_interval_end(w, tau0):
        raise PreconditionError(f"inadmissible (D, epsilon) = ({D:.12g}, {epsilon}) at tau0 = {tau0}: "
                                "the geodesic leaves the level towards increasing 1/f^2")
    return tp


def leg_sums(w: WarpFunction, tau0: float, D: float, epsilon: int, n_max: int,
             settings: SolverSettings = DEFAULT_SETTINGS) -> LegSums:
    """Integrals of the legs n = 0..n_max of the generalized bounce integral."""
    if n_max < 0:
        raise DomainError("n_max must be non-negative")
    tp = _admissible_turning(w, tau0, D, epsilon, settings)
    head_right = segment_integral(w, tau0, tp.b_star, D, settings)
    head_left = segment_integral(w, tp.a_star, tau0, D, settings)
    sums = LegSums(tau0=tau0, D=D, epsilon=epsilon, turning=tp, sequence=[tau0],
                   head_right=head_right, head_left=head_left)

    end = tp.b_star if epsilon > 0 else tp.a_star
    leg = head_right if epsilon > 0 else head_left
    full = None
    for k in range(n_max + 1):
        sums.legs.append(leg)
        sums.sequence.append(end)
        if not leg.is_finite:
            sums.status = leg.kind if leg.kind == "undefined" else "divergent"
            break
        if is_interval_end(w, end):
            sums.status = "escape"
            break
        if full is None:
            full = sums.full_span
        end = tp.a_star if end == tp.b_star else tp.b_star
        leg = full
    logger.debug(f"leg_sums tau0={tau0} D={D} eps={epsilon}: {len(sums.legs)} legs, {sums.status}")
    return sums


def _invert_partial(w: WarpFunction, start: float, end: float, D: float, target: float,
                    total: float, settings: SolverSettings) -> float:
    """tau between start and end at which the integral from start equals target."""
    if target <= 0.0:
        return start
    if math.isfinite(total) and target >= total:
        return end

    def from_start(x):
        lo, hi = sorted((start, x))
        return _integrate(w, lo, hi, D, ARCLENGTH, settings)

    def to_end(x):
        lo, hi = sorted((x, end))
        return _integrate(w, lo, hi, D, ARCLENGTH, settings)

    if math.isfinite(total) and math.isfinite(end):
        if target > 0.5 * total:
            fn = lambda x: (total - to_end(x)) - target
        else:
            fn = lambda x: from_start(x) - target
        lo, hi = start, end
    else:
        # divergent leg or infinite ray: march geometrically until the target is passed
        fn = lambda x: from_start(x) - target
        sign = 1.0 if end > start else -1.0
        lo, hi = start, None
        for k in range(200):
            if math.isfinite(end):
                x = end - sign * abs(end - start) * 2.0 ** (-(k + 1))
            else:
                x = start + sign * max(1.0, abs(start)) * 2.0 ** k
            if fn(x) >= 0.0:
                hi = x
                break
            lo = x
        if hi is None:
            raise PreconditionError("arclength target not bracketed inside a divergent leg")
    a, b = sorted((lo, hi))
    return float(brentq(fn, a, b, xtol=1e-14, rtol=1e-12))


def advance(w: WarpFunction, tau0: float, D: float, epsilon: int, L: float,
            settings: SolverSettings = DEFAULT_SETTINGS) -> AdvanceResult:
    """tau at which the (D, epsilon) geodesic from tau0 has fiber arclength L."""
    if not L > 0:
        raise PreconditionError(f"target arclength must be positive, got {L}")
    tp = _admissible_turning(w, tau0, D, epsilon, settings)
    head_right = segment_integral(w, tau0, tp.b_star, D, settings)
    head_left = segment_integral(w, tp.a_star, tau0, D, settings)

    start = tau0
    end = tp.b_star if epsilon > 0 else tp.a_star
    leg = head_right if epsilon > 0 else head_left
    direction = epsilon
    used, n = 0.0, 0
    remaining = L
    while True:
        if leg.kind == "undefined":
            raise PreconditionError(f"level D = {D:.12g} is not admissible from tau0 = {tau0}")
        if leg.is_divergent:
            tau = _invert_partial(w, start, end, D, remaining, math.inf, settings)
            return AdvanceResult(tau, n, "reached", L, direction, absorbed=math.isfinite(end))
        if remaining <= leg.value:
            tau = _invert_partial(w, start, end, D, remaining, leg.value, settings)
            return AdvanceResult(tau, n, "reached", L, direction)
        remaining -= leg.value
        used += leg.value
        if is_interval_end(w, end):
            logger.debug(f"advance escaped at {end} after {used:.6g} of {L:.6g}")
            return AdvanceResult(end, n, "escape", used, direction)
        full = head_left + head_right
        both_interior = not (is_interval_end(w, tp.a_star) or is_interval_end(w, tp.b_star))
        if full.is_finite and both_interior and full.value > 0:
            j = max(1, math.ceil(remaining / full.value))
            if j > 10 ** 7:
                raise PreconditionError("bounce count exceeds 1e7 before reaching the target")
            remaining -= (j - 1) * full.value
            used += (j - 1) * full.value
            n += j
            direction = epsilon * (-1) ** n
            start, end = (tp.a_star, tp.b_star) if direction > 0 else (tp.b_star, tp.a_star)
            if remaining <= 0.0:
                return AdvanceResult(start, n - 1, "reached", L, -direction)
            tau = _invert_partial(w, start, end, D, remaining, full.value, settings)
            return AdvanceResult(tau, n, "reached", L, direction)
        n += 1
        direction = -direction
        start, end = end, (tp.a_star if end == tp.b_star else tp.b_star)
        leg = full


def arrival_lengths(w: WarpFunction, tau0: float, tau1: float, D: float, epsilon: int,
                    n_max: int, settings: SolverSettings = DEFAULT_SETTINGS) -> List[Optional[float]]:
    """
    Fiber arclength at which the (D, epsilon) geodesic from tau0 passes tau1
    on its leg n, for n = 0..n_max; None where that leg misses tau1 or
    does not exist.
    """
    tp = _admissible_turning(w, tau0, D, epsilon, settings)
    out: List[Optional[float]] = [None] * (n_max + 1)
    if not tp.a_star <= tau1 <= tp.b_star:
        return out
    if epsilon > 0 and tau1 > tau0:
        out[0] = _integrate(w, tau0, tau1, D, ARCLENGTH, settings)
    elif epsilon < 0 and tau1 < tau0:
        out[0] = _integrate(w, tau1, tau0, D, ARCLENGTH, settings)
    if n_max == 0:
        return out

    head = segment_integral(w, tau0, tp.b_star, D, settings) if epsilon > 0 \
        else segment_integral(w, tp.a_star, tau0, D, settings)
    first_turn = tp.b_star if epsilon > 0 else tp.a_star
    if not head.is_finite or is_interval_end(w, first_turn):
        return out
    other = segment_integral(w, tp.a_star, tau0, D, settings) if epsilon > 0 \
        else segment_integral(w, tau0, tp.b_star, D, settings)
    full = (head + other)
    to_upper = _integrate(w, tau1, tp.b_star, D, ARCLENGTH, settings) if tau1 < tp.b_star else 0.0
    from_lower = _integrate(w, tp.a_star, tau1, D, ARCLENGTH, settings) if tau1 > tp.a_star else 0.0
    second_turn = tp.a_star if epsilon > 0 else tp.b_star
    for k in range(1, n_max + 1):
        if k >= 2 and (not full.is_finite or is_interval_end(w, second_turn)):
            break
        before = head.value + (k - 1) * (full.value if k >= 2 else 0.0)
        moving_down = (epsilon > 0) == (k % 2 == 1)
        out[k] = before + (to_upper if moving_down else from_lower)
    return out


def cumulative_integrals(w: WarpFunction, nodes: np.ndarray, D: float, weight: str = ARCLENGTH,
                         settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Integral from nodes[0] to every node along a monotone sequence of tau values."""
    nodes = np.asarray(nodes, dtype=float)
    out = np.zeros(nodes.size)
    for j in range(1, nodes.size):
        lo, hi = sorted((float(nodes[j - 1]), float(nodes[j])))
        out[j] = out[j - 1] + _integrate(w, lo, hi, D, weight, settings)
    return out


# -- arrival scans -------------------------------------------------------------

def decode_K(w: WarpFunction, tau0: float, K: float) -> Tuple[float, int]:
    """(D, epsilon) from K = 1/f^2(tau0) - D (epsilon = +1) or D - 1/f^2(tau0) (epsilon = -1)."""
    p0, dp0, _ = (float(v) for v in w.level_derivs(tau0))
    D = p0 - abs(K)
    if K > 0:
        return D, 1
    if K < 0:
        return D, -1
    return D, (1 if dp0 >= 0 else -1)


def encode_K(w: WarpFunction, tau0: float, D: float, epsilon: int) -> float:
    p0 = float(w.level(tau0))
    return epsilon * (p0 - D)


def k_grid(p0: float, m: float, K_max: float) -> np.ndarray:
    """Symmetric K grid: logarithmic in |K|, uniform over the bounce range, dense near D = m."""
    span = max(p0 - m, 0.0)
    mags = [np.geomspace(1e-8 * p0, K_max * p0, 80)]
    if span > 0:
        mags.append(np.linspace(0.0, span, 41)[1:])
        j = np.arange(1, 21, dtype=float)
        mags.append(span * (1.0 - np.power(2.0, -j)))
        mags.append(span * (1.0 + np.power(2.0, -j)))
    mags = np.unique(np.concatenate(mags))
    mags = mags[mags > 0]
    return np.concatenate([-mags[::-1], [0.0], mags])


@dataclass
class ArrivalScan:
    """Fiber arclengths at which the geodesics from tau0 pass tau1, over a K grid"""

    tau0: float
    tau1: float
    K: np.ndarray
    D: np.ndarray
    epsilon: np.ndarray
    # lengths[n, j]: arrival on leg n for K[j]; nan where the leg misses tau1
    lengths: np.ndarray
    admissible: np.ndarray

    @property
    def n_max(self) -> int:
        return self.lengths.shape[0] - 1

    def runs(self, n: int) -> List[np.ndarray]:
        """Index runs with consecutive finite arrivals on leg n and a fixed epsilon."""
        finite = np.isfinite(self.lengths[n])
        out, current = [], []
        for j in range(self.K.size):
            if finite[j] and (not current or self.epsilon[current[-1]] == self.epsilon[j]):
                current.append(j)
                continue
            if current:
                out.append(np.array(current))
            current = [j] if finite[j] else []
        if current:
            out.append(np.array(current))
        return out

    def bands(self) -> List[Tuple[float, float]]:
        """Merged intervals of reachable arclength, one interval per continuous run."""
        raw = []
        for n in range(self.n_max + 1):
            for run in self.runs(n):
                values = self.lengths[n, run]
                raw.append((float(values.min()), float(values.max())))
        raw.sort()
        merged: List[Tuple[float, float]] = []
        for lo, hi in raw:
            if merged and lo <= merged[-1][1] * (1.0 + 1e-9) + 1e-12:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return merged

    def to_dict(self) -> Dict:
        return {
            "tau0": self.tau0,
            "tau1": self.tau1,
            "points": int(self.K.size),
            "admissible": int(np.count_nonzero(self.admissible)),
            "bands": [[lo, format_extended(hi)] for lo, hi in self.bands()],
        }


def _arrivals_at(w: WarpFunction, tau0: float, tau1: float, K: float, n_max: int,
                 settings: SolverSettings) -> Optional[List[float]]:
    D, eps = decode_K(w, tau0, K)
    try:
        values = arrival_lengths(w, tau0, tau1, D, eps, n_max, settings)
    except PreconditionError:
        return None
    return [math.nan if v is None else v for v in values]


def scan_arrivals(w: WarpFunction, tau0: float, tau1: float, n_max: int,
                  settings: SolverSettings = DEFAULT_SETTINGS,
                  K_values: Optional[np.ndarray] = None, refine: int = 12) -> ArrivalScan:
    """
    Evaluate arrival_lengths over a K grid and bisect towards every point
    where a leg starts or stops reaching tau1, so that the continuity runs
    used for bracketing end close to the domain gaps.
    """
    w.check_point(tau0)
    w.check_point(tau1)
    p0 = float(w.level(tau0))
    if K_values is None:
        m = min(w.infima(tau0, settings)[0], p0)
        K_values = k_grid(p0, m, settings.K_max)
    table: Dict[float, Optional[List[float]]] = {}
    for K in np.asarray(K_values, dtype=float):
        table[float(K)] = _arrivals_at(w, tau0, tau1, float(K), n_max, settings)

    def pattern(values):
        return None if values is None else tuple(np.isfinite(values))

    for _ in range(refine if refine > 0 else 0):
        keys = sorted(table)
        added = 0
        for k0, k1 in zip(keys[:-1], keys[1:]):
            if (k0 < 0) != (k1 < 0) or k0 == 0.0 or k1 == 0.0:
                continue
            if pattern(table[k0]) == pattern(table[k1]):
                continue
            if abs(k1 - k0) <= 1e-10 * max(abs(k0), abs(k1), 1e-300):
                continue
            mid = 0.5 * (k0 + k1)
            table[mid] = _arrivals_at(w, tau0, tau1, mid, n_max, settings)
            added += 1
        if added == 0:
            break

    keys = np.array(sorted(table))
    lengths = np.full((n_max + 1, keys.size), math.nan)
    admissible = np.zeros(keys.size, dtype=bool)
    Ds = np.empty(keys.size)
    eps = np.empty(keys.size, dtype=int)
    for j, K in enumerate(keys):
        Ds[j], eps[j] = decode_K(w, tau0, float(K))
        values = table[float(K)]
        if values is not None:
            admissible[j] = True
            lengths[:, j] = values
    logger.debug(f"scan_arrivals {tau0} -> {tau1}: {keys.size} K values, "
                 f"{np.count_nonzero(admissible)} admissible")
    return ArrivalScan(tau0=tau0, tau1=tau1, K=keys, D=Ds, epsilon=eps,
                       lengths=lengths, admissible=admissible)
