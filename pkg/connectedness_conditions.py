#!/usr/bin/env python3
"""
Geodesic connectedness conditions at the extremes of the base interval.

All conditions are read off the level function P = 1/f^2 near each
extreme:

- condition A: the extreme is not a strict relative minimum of P, or the
  level integral at m_end diverges there
- condition B: A, or twice the defect d reaches diam(F)
- condition C: B, or the defect reaches the index i
- condition R: for ends sharing the infimum m, the bands of reachable
  arclength [r_i^n, r_s^n] (and [l_i^n, l_s^n]) cover [r_i^0, diam(F)]

Limits D -> m are taken along D_k = m + (D_0 - m) 2^-(k+1) with tail
extrema; a sequence that does not settle is reported as a bracket.

Features:
- Per-extreme reports with the sampled sequences behind every number
- Residual tables with the window either sent to the extreme or held fixed
- Window unions and the non-joinability certificate for a length set
- Extendibility cells (lim f, lim f', f'' bound, tail of 1/f)
- Curvature criterion f'' <= 0 with strip connectedness
- Connectedness verdict with a witness pair whenever it is negative
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from bounce_integrals import (REASON_ACCUMULATION, IntegralValue, scan_arrivals,
                              segment_integral, turning_points)
from fiber_geometry import FiberGeometry, FiberPoint
from grw_errors import DomainError, PreconditionError
from solver_settings import DEFAULT_SETTINGS, SolverSettings, format_extended
from warp_function import ENDS, ExtremeProfile, WarpFunction

logger = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-6
MIN_INNER_STEPS = 5
MAX_OUTER_STEPS = 30
TINY_LEVEL = 1e-250
COVERAGE_CAP = 10 ** 4

YES, NO, NO_STAR, NO_STAR_STAR, NO_INFO, NOT_CLASSIFIABLE = (
    "Yes", "No", "No*", "No**", "NoInformation", "NotClassifiable")
FOOTNOTES = {
    NO_STAR: "Condition (C) does not hold either. No information on Condition (R), if applicable.",
    NO_STAR_STAR: "No information on Condition (C) or (R).",
}


def _ext(value: Optional[float]):
    if value is None:
        return "n/a"
    return format_extended(float(value))


def _close(x: float, y: float, tol: float = CONVERGENCE_TOL) -> bool:
    if math.isinf(x) or math.isinf(y):
        return x == y
    return abs(x - y) <= tol * max(1.0, abs(x), abs(y))


def _settled(values: Sequence[float]) -> bool:
    """Three successive values agree."""
    if len(values) < 3:
        return False
    a, b, c = values[-3:]
    return _close(a, b) and _close(b, c)


def _tail(values: Sequence[float]) -> List[float]:
    k = max(3, len(values) // 4)
    return list(values[-k:])


# -- results -------------------------------------------------------------------

@dataclass
class DefectResult:
    """Defect d at one extreme: limsup of near-level integrals minus the level integral"""

    applicable: bool
    value: Optional[float] = None
    converged: bool = True
    bracket: Optional[Tuple[float, float]] = None
    reason: Optional[str] = None
    samples: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "applicable": self.applicable,
            "value": _ext(self.value),
            "converged": self.converged,
            "bracket": None if self.bracket is None else [_ext(v) for v in self.bracket],
            "reason": self.reason,
            "samples": [[D, _ext(v)] for D, v in self.samples],
        }


@dataclass
class IndexResult:
    """Index i at one extreme: infimum over D in (m, m_end) of the full-span integral"""

    applicable: bool
    value: Optional[float] = None
    argmin: Optional[float] = None
    reason: Optional[str] = None
    samples: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "applicable": self.applicable,
            "value": _ext(self.value),
            "argmin_D": self.argmin,
            "reason": self.reason,
            "samples": [[D, _ext(v)] for D, v in self.samples],
        }


@dataclass
class ExtendibilityCell:
    end: str
    row: str
    verdict: str
    lim_f: Optional[float]
    lim_fprime: Optional[float]

    @property
    def footnote(self) -> Optional[str]:
        return FOOTNOTES.get(self.verdict)

    def to_dict(self) -> Dict:
        return {
            "end": self.end,
            "row": self.row,
            "verdict": self.verdict,
            "footnote": self.footnote,
            "lim_f": "none" if self.lim_f is None else _ext(self.lim_f),
            "lim_fprime": "none" if self.lim_fprime is None else _ext(self.lim_fprime),
        }


@dataclass
class CurvatureReport:
    fpp_nonpositive: bool
    inextendible: bool
    strip: Optional[Tuple[float, float]] = None
    strip_connected: Optional[bool] = None
    max_fpp: float = math.nan

    def to_dict(self) -> Dict:
        return {
            "fpp_nonpositive": self.fpp_nonpositive,
            "inextendible": self.inextendible,
            "max_sampled_fpp": self.max_fpp,
            "strip": None if self.strip is None else list(self.strip),
            "strip_connected": self.strip_connected,
        }


@dataclass
class EndReport:
    end: str
    profile: ExtremeProfile
    A: bool
    integral_A: Optional[IntegralValue]
    defect: DefectResult
    index: IndexResult
    B: bool
    C: bool
    cell: ExtendibilityCell
    terminal_window: Optional[Dict] = None

    def to_dict(self) -> Dict:
        return {
            "end": self.end,
            "profile": self.profile.to_dict(),
            "A": self.A,
            "integral_A": None if self.integral_A is None else self.integral_A.to_dict(),
            "d": self.defect.to_dict(),
            "i": self.index.to_dict(),
            "B": self.B,
            "C": self.C,
            "extendibility": self.cell.to_dict(),
            "terminal_window": self.terminal_window,
        }


@dataclass
class Witness:
    """A pair (z0, z1) that no geodesic joins, with the evidence behind it"""

    tau0: float
    tau1: float
    x0: FiberPoint
    x1: FiberPoint
    L: float
    source: str
    bands: List[Tuple[float, float]] = field(default_factory=list)
    note: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "z0": [self.tau0, self.x0.to_list()],
            "z1": [self.tau1, self.x1.to_list()],
            "L": self.L,
            "source": self.source,
            "reachable_bands": [[lo, _ext(hi)] for lo, hi in self.bands],
            "note": self.note,
        }


# -- residual tables -----------------------------------------------------------

PIECES = ("Cr", "Wr", "Cl", "Wl")


@dataclass
class ResidualTable:
    """
    Sequences behind r_i^n, r_s^n, l_i^n, l_s^n at one base point.

    For every D_k the table keeps four segment integrals: Cr from tau0 to
    the right window point hi, Wr from hi to b*(D_k), and Cl, Wl on the
    left. The half spans are H0r = Cr + Wr, H0l = Cl + Wl and the full
    span is their sum. Sides where condition A holds carry infinite
    spans (their D -> m limit diverges).
    """

    tau0: float
    window: Tuple[float, float]
    mode: str
    m: float
    D: List[float] = field(default_factory=list)
    pieces: Dict[str, List[float]] = field(default_factory=lambda: {k: [] for k in PIECES})
    inner_converged: bool = False
    outer_converged: bool = True
    windows_tried: List[Tuple[float, float]] = field(default_factory=list)
    divergent_b: bool = False
    divergent_a: bool = False

    # per-k sequences of the half spans with the divergent sides folded in
    def _h0r(self, k: int) -> float:
        return math.inf if self.divergent_b else self.pieces["Cr"][k] + self.pieces["Wr"][k]

    def _h0l(self, k: int) -> float:
        return math.inf if self.divergent_a else self.pieces["Cl"][k] + self.pieces["Wl"][k]

    def _wr(self, k: int) -> float:
        return math.inf if self.divergent_b else self.pieces["Wr"][k]

    def _wl(self, k: int) -> float:
        return math.inf if self.divergent_a else self.pieces["Wl"][k]

    def _cr(self, k: int) -> float:
        return math.inf if (self.divergent_b and self.mode == "limit") else self.pieces["Cr"][k]

    def _cl(self, k: int) -> float:
        return math.inf if (self.divergent_a and self.mode == "limit") else self.pieces["Cl"][k]

    def _sequence(self, side: str, bound: str, n: int) -> List[float]:
        out = []
        for k in range(len(self.D)):
            near, far = (self._h0r(k), self._h0l(k)) if side == "r" else (self._h0l(k), self._h0r(k))
            inside = self._cr(k) if side == "r" else self._cl(k)
            outside = self._wr(k) if side == "r" else self._wl(k)
            full = near + far
            base = near if n % 2 == 0 else far
            if bound == "i":
                if n == 0:
                    value = inside
                else:
                    value = base + far + inside + ((n - 1) * full if n >= 2 else 0.0)
            else:
                value = base + (n * full if n >= 1 else 0.0) + outside
            out.append(value)
        return out

    def value(self, side: str, bound: str, n: int) -> float:
        """Tail extremum over D -> m: liminf for the lower bounds, limsup for the upper ones."""
        seq = self._sequence(side, bound, n)
        if not seq:
            return math.nan
        tail = _tail(seq)
        return min(tail) if bound == "i" else max(tail)

    def r_i(self, n: int) -> float:
        return self.value("r", "i", n)

    def r_s(self, n: int) -> float:
        return self.value("r", "s", n)

    def l_i(self, n: int) -> float:
        return self.value("l", "i", n)

    def l_s(self, n: int) -> float:
        return self.value("l", "s", n)

    def rows(self, n_max: int) -> Dict[str, List[float]]:
        return {
            "r_i": [self.r_i(n) for n in range(n_max + 1)],
            "r_s": [self.r_s(n) for n in range(n_max + 1)],
            "l_i": [self.l_i(n) for n in range(n_max + 1)],
            "l_s": [self.l_s(n) for n in range(n_max + 1)],
        }

    def union(self, side: str, n_max: int) -> List[Tuple[float, float]]:
        """[0, x_i^0] together with every band [x_i^n, x_s^n], merged."""
        lower = self.r_i if side == "r" else self.l_i
        upper = self.r_s if side == "r" else self.l_s
        raw = [(0.0, lower(0))] + [(lower(n), upper(n)) for n in range(n_max + 1)]
        raw.sort()
        merged: List[Tuple[float, float]] = []
        for lo, hi in raw:
            if merged and lo <= merged[-1][1] + CONVERGENCE_TOL:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return merged

    def to_dict(self, n_max: int) -> Dict:
        rows = self.rows(n_max)
        return {
            "tau0": self.tau0,
            "mode": self.mode,
            "window": [_ext(v) for v in self.window],
            "m": self.m,
            "inner_converged": self.inner_converged,
            "outer_converged": self.outer_converged,
            "windows_tried": [[_ext(lo), _ext(hi)] for lo, hi in self.windows_tried],
            "rows": {k: [_ext(v) for v in vals] for k, vals in rows.items()},
            "D": self.D,
            "A_union": [[lo, _ext(hi)] for lo, hi in self.union("r", n_max)],
            "B_union": [[lo, _ext(hi)] for lo, hi in self.union("l", n_max)],
        }


# -- condition A, defect, index --------------------------------------------------

def _shrink_towards(w: WarpFunction, c: float, end: str) -> float:
    e = w.end_value(end)
    if math.isfinite(e):
        return 0.5 * (c + e)
    step = max(1.0, abs(c))
    return c + step if end == "b" else c - step


def _level_segment(w: WarpFunction, c: float, end: str, D: float,
                   settings: SolverSettings) -> IntegralValue:
    e = w.end_value(end)
    return segment_integral(w, c, e, D, settings) if end == "b" else segment_integral(w, e, c, D, settings)


def _window_integral(w: WarpFunction, end: str, D: float,
                     settings: SolverSettings) -> Tuple[float, IntegralValue]:
    """Level integral from the window point to the extreme, moving c outwards while undefined."""
    c = w.window_point(end, settings)
    value = _level_segment(w, c, end, D, settings)
    for _ in range(40):
        if value.kind != "undefined":
            break
        c = _shrink_towards(w, c, end)
        value = _level_segment(w, c, end, D, settings)
    return c, value


def condition_A(w: WarpFunction, end: str,
                settings: SolverSettings = DEFAULT_SETTINGS) -> Tuple[bool, Optional[IntegralValue]]:
    """(verdict, level integral at m_end); the integral is None when the extreme is no relative minimum."""
    profile = w.extreme_profile(end, settings)
    if not profile.is_relative_min:
        return True, None
    _, value = _window_integral(w, end, profile.m_end, settings)
    if value.kind == "undefined":
        logger.warning(f"level integral at {end} stays undefined near the extreme")
        return False, value
    return value.is_divergent, value


def _tangent_accumulation(w: WarpFunction, end: str, settings: SolverSettings) -> bool:
    """True when critical points of 1/f^2 with record-low levels pile up at the extreme."""
    e = w.end_value(end)
    shells, per_shell = min(settings.k_max, 30), 64
    pts = w.approach_points(end, shells=shells, per_shell=per_shell, settings=settings)
    with np.errstate(all='ignore'):
        p, dp, _ = (np.asarray(v, dtype=float) for v in w.level_derivs(pts))
    grad = np.abs(dp)
    running = math.inf
    hit_shells = set()
    for i in range(1, pts.size - 1):
        running = min(running, p[i - 1])
        if not (math.isfinite(p[i]) and p[i] > 0):
            continue
        if not (grad[i] <= grad[i - 1] and grad[i] <= grad[i + 1]):
            continue
        lo, hi = sorted((float(pts[i - 1]), float(pts[i + 1])))
        dist = abs(e - pts[i]) if math.isfinite(e) else max(1.0, abs(float(pts[i])))
        res = minimize_scalar(lambda t: abs(float(w.level_prime(t))), bounds=(lo, hi), method='bounded',
                              options={'xatol': 1e-8 * max(dist, 1e-300)})
        x = float(res.x)
        px, dpx, _ = (float(v) for v in w.level_derivs(x))
        scale = abs(e - x) if math.isfinite(e) else max(1.0, abs(x))
        if abs(dpx) * scale <= 1e-8 * px and px < running * (1.0 - 1e-10):
            hit_shells.add(i // per_shell)
        running = min(running, px)
    found = len(hit_shells) >= 3 and max(hit_shells) >= shells - 5
    if found:
        logger.debug(f"critical levels accumulate at {end}: {len(hit_shells)} shells")
    return found


def defect_d(w: WarpFunction, end: str, settings: SolverSettings = DEFAULT_SETTINGS) -> DefectResult:
    """limsup_{D -> m_end} of the integral from c to the turning point, minus the level integral."""
    profile = w.extreme_profile(end, settings)
    if not profile.is_relative_min:
        return DefectResult(applicable=False, reason="not a relative minimum")
    c, limit = _window_integral(w, end, profile.m_end, settings)
    if not limit.is_finite:
        return DefectResult(applicable=False, reason="level integral is not finite")
    if _tangent_accumulation(w, end, settings):
        return DefectResult(applicable=True, value=math.inf, reason=REASON_ACCUMULATION)

    m_end = profile.m_end
    pc = float(w.level(c))
    samples: List[Tuple[float, float]] = []
    values: List[float] = []
    for k in range(settings.k_max):
        D = m_end + (pc - m_end) * 2.0 ** (-(k + 1))
        if not D > m_end:
            break
        tp = turning_points(w, c, D, settings)
        seg = segment_integral(w, c, tp.b_star, D, settings) if end == "b" \
            else segment_integral(w, tp.a_star, c, D, settings)
        if seg.is_divergent:
            samples.append((D, math.inf))
            return DefectResult(applicable=True, value=math.inf, reason=seg.reason, samples=samples)
        if not seg.is_finite:
            continue
        values.append(seg.value - limit.value)
        samples.append((D, values[-1]))
        if k >= MIN_INNER_STEPS and _settled(values):
            break
    if not values:
        return DefectResult(applicable=True, value=None, converged=False,
                            reason="no admissible levels near the extreme", samples=samples)
    tail = _tail(values)
    converged = _settled(values)
    value = max(0.0, max(tail))
    if not converged:
        logger.warning(f"defect at {end} did not settle; reporting the tail bracket")
    return DefectResult(applicable=True, value=value, converged=converged,
                        bracket=None if converged else (max(0.0, min(tail)), value), samples=samples)


def index_i(w: WarpFunction, end: str, settings: SolverSettings = DEFAULT_SETTINGS) -> IndexResult:
    """inf over D in (m, m_end) of the integral from a*(D) to b (resp. from a to b*(D))."""
    profile = w.extreme_profile(end, settings)
    if not profile.is_relative_min:
        return IndexResult(applicable=False, reason="not a relative minimum")
    m, m_end = w.global_infimum, profile.m_end
    if not m < m_end - settings.tol_level * max(1.0, abs(m_end)):
        return IndexResult(applicable=False, reason="m equals m_end")
    c = w.window_point(end, settings)
    if not float(w.level(c)) > m_end:
        c, _ = _window_integral(w, end, m_end, settings)
    samples: List[Tuple[float, float]] = []

    def span(D: float) -> float:
        try:
            tp = turning_points(w, c, D, settings)
        except PreconditionError:
            return math.inf
        seg = segment_integral(w, tp.a_star, w.b, D, settings) if end == "b" \
            else segment_integral(w, w.a, tp.b_star, D, settings)
        value = seg.value if seg.is_finite else math.inf
        samples.append((D, value))
        return value

    grid = m + (m_end - m) * np.arange(1, 34) / 34.0
    values = np.array([span(float(D)) for D in grid])
    best = float(values.min())
    j = int(values.argmin())
    for _ in range(12):
        if not math.isfinite(best):
            break
        lo = float(grid[j - 1]) if j > 0 else m + 0.5 * (float(grid[0]) - m)
        hi = float(grid[j + 1]) if j < grid.size - 1 else m_end - 0.5 * (m_end - float(grid[-1]))
        grid = np.linspace(lo, hi, 9)
        values = np.array([span(float(D)) for D in grid])
        j = int(values.argmin())
        previous, best = best, min(best, float(values[j]))
        if abs(previous - best) < CONVERGENCE_TOL:
            break
    samples.sort()
    argmin = min(samples, key=lambda s: s[1])[0] if samples else None
    return IndexResult(applicable=True, value=best, argmin=argmin, samples=samples)


# -- residual sequences ---------------------------------------------------------

def residual_applicable(w: WarpFunction, settings: SolverSettings = DEFAULT_SETTINGS) -> Tuple[bool, str]:
    """Both extremes are relative minima at the common infimum m, and 1/f^2 > m inside."""
    prof = {e: w.extreme_profile(e, settings) for e in ENDS}
    m = w.global_infimum
    tol = settings.tol_level * max(1.0, abs(m))
    if not all(prof[e].is_relative_min for e in ENDS):
        return False, "an extreme is not a relative minimum"
    if not all(abs(prof[e].m_end - m) <= tol for e in ENDS):
        return False, "m_a, m_b and m differ"
    core = w._min_over(w.window_point("a", settings), w.window_point("b", settings))
    if m > 0 and not core > m + tol:
        return False, "1/f^2 reaches m inside the interval"
    return True, "applicable"


def _window_bounds(w: WarpFunction, tau0: float, eps: Optional[float], M: Optional[float]) -> Tuple[float, float]:
    def side(e: float, sign: float) -> float:
        if math.isfinite(e):
            return e - sign * eps
        return sign * M
    hi = side(w.b, 1.0)
    lo = side(w.a, -1.0)
    return min(lo, tau0), max(hi, tau0)


def _inner_table(w: WarpFunction, tau0: float, lo: float, hi: float, mode: str, m: float,
                 divergent: Dict[str, bool], settings: SolverSettings) -> Optional[ResidualTable]:
    table = ResidualTable(tau0=tau0, window=(lo, hi), mode=mode, m=m,
                          divergent_a=divergent["a"], divergent_b=divergent["b"])
    core = w._min_over(lo, hi) if lo < hi else float(w.level(tau0))
    if not core > m:
        return None
    for k in range(settings.k_max):
        D = m + (core - m) * 2.0 ** (-(k + 1))
        if not D > m:
            break
        tp = turning_points(w, tau0, D, settings)
        parts = {
            "Cr": segment_integral(w, tau0, hi, D, settings),
            "Wr": segment_integral(w, hi, tp.b_star, D, settings),
            "Cl": segment_integral(w, lo, tau0, D, settings),
            "Wl": segment_integral(w, tp.a_star, lo, D, settings),
        }
        if any(v.kind == "undefined" for v in parts.values()):
            continue
        table.D.append(D)
        for key, v in parts.items():
            table.pieces[key].append(v.value if v.is_finite else math.inf)
        if k >= MIN_INNER_STEPS and all(_settled(table.pieces[key]) for key in PIECES):
            table.inner_converged = True
            break
    if not table.D:
        return None
    if not table.inner_converged:
        logger.debug(f"residual pieces at tau0={tau0} window=({lo}, {hi}) did not settle")
    return table


def _tables_agree(tables: List[ResidualTable], n_max: int) -> bool:
    if len(tables) < 3:
        return False
    rows = [t.rows(n_max) for t in tables[-3:]]
    for key in rows[0]:
        for n in range(n_max + 1):
            a, b, c = (r[key][n] for r in rows)
            if not (_close(a, b) and _close(b, c)):
                return False
    return True


def residual_sequences(w: WarpFunction, tau0: float, n_max: int,
                       window: Optional[float] = None,
                       settings: SolverSettings = DEFAULT_SETTINGS,
                       check: bool = True) -> Optional[ResidualTable]:
    """
    Residual table at tau0, or None when the construction does not apply.

    With ``window`` None the window points are sent to the extremes
    (eps -> 0, M -> infinity); a number holds them fixed: it is eps at a
    finite extreme and M at an infinite one.
    """
    w.check_point(tau0)
    if check:
        ok, why = residual_applicable(w, settings)
        if not ok:
            logger.debug(f"residual table not applicable: {why}")
            return None
    m = w.global_infimum
    divergent = {e: condition_A(w, e, settings)[0] for e in ENDS}

    if window is not None:
        lo, hi = _window_bounds(w, tau0, window, window)
        table = _inner_table(w, tau0, lo, hi, "window", m, divergent, settings)
        if table is not None:
            table.windows_tried = [(lo, hi)]
        return table

    eps0, M0 = w.window_eps(settings), settings.window_M
    tables: List[ResidualTable] = []
    tried = []
    for j in range(MAX_OUTER_STEPS):
        lo, hi = _window_bounds(w, tau0, eps0 * 2.0 ** (-j), M0 * 2.0 ** j)
        if lo < hi and w._min_over(lo, hi) < TINY_LEVEL:
            break
        table = _inner_table(w, tau0, lo, hi, "limit", m, divergent, settings)
        if table is None:
            break
        tried.append((lo, hi))
        tables.append(table)
        if _tables_agree(tables, n_max):
            break
    if not tables:
        return None
    final = tables[-1]
    final.windows_tried = tried
    final.outer_converged = _tables_agree(tables, n_max)
    if not final.outer_converged:
        logger.warning(f"residual table at tau0={tau0} did not settle over {len(tables)} windows")
    return final


def coverage_gap(table: ResidualTable, side: str, diameter: float) -> Optional[Tuple[int, float, float]]:
    """First (n, x_s^n, x_i^(n+1)) leaving a hole below diam(F); None when the bands cover."""
    lower = table.r_i if side == "r" else table.l_i
    upper = table.r_s if side == "r" else table.l_s
    if lower(0) >= diameter:
        return None
    for n in range(COVERAGE_CAP):
        top = upper(n)
        if top >= diameter:
            return None
        nxt = lower(n + 1)
        if nxt > top + CONVERGENCE_TOL * max(1.0, top):
            return n, top, nxt
    logger.warning("coverage test stopped before the bands reached diam(F)")
    return None


def window_certificate(table: ResidualTable, lengths: Sequence[float], n_max: int) -> Dict:
    """Disjointness of a length set from both window unions (no join beyond the window)."""
    reach = min(table.r_i(n_max), table.l_i(n_max))
    checked = [L for L in lengths if L <= reach]
    unions = {"A": table.union("r", n_max), "B": table.union("l", n_max)}
    hits = {key: [L for L in checked if any(lo - CONVERGENCE_TOL <= L <= hi + CONVERGENCE_TOL
                                            for lo, hi in union)]
            for key, union in unions.items()}
    return {
        "holds": bool(checked) and not hits["A"] and not hits["B"],
        "lengths_checked": checked,
        "checked_up_to": _ext(reach),
        "hits_A": hits["A"],
        "hits_B": hits["B"],
        "window": [_ext(v) for v in table.window],
    }


# -- extendibility cells, curvature ------------------------------------------------

def _tail_of_inverse_f_diverges(w: WarpFunction, end: str, settings: SolverSettings) -> bool:
    _, value = _window_integral(w, end, 0.0, settings)
    return value.is_divergent


def extendibility_cell(w: WarpFunction, end: str,
                       settings: SolverSettings = DEFAULT_SETTINGS) -> ExtendibilityCell:
    """Read condition A off the limits of f and f' at one extreme."""
    prof = w.extreme_profile(end, settings)
    lim_f, lim_fp = prof.lim_f, prof.lim_fprime

    def cell(row: str, verdict: str) -> ExtendibilityCell:
        return ExtendibilityCell(end=end, row=row, verdict=verdict, lim_f=lim_f, lim_fprime=lim_fp)

    if lim_f is None:
        return cell("lim f does not exist", NOT_CLASSIFIABLE)
    if lim_f == 0.0:
        return cell("lim f = 0", YES)
    if not math.isfinite(w.end_value(end)):
        if math.isfinite(lim_f):
            return cell("lim f = alpha", YES)
        if _tail_of_inverse_f_diverges(w, end, settings):
            return cell("lim f = inf, tail of 1/f = inf", YES)
        return cell("lim f = inf, tail of 1/f < inf", NO_STAR_STAR)
    if math.isinf(lim_f):
        return cell("lim f = inf", NO)
    if lim_fp is None:
        return cell("lim f = alpha, lim f' does not exist", NO_INFO)
    # the slope towards the extreme: f' at b, -f' at a
    beta = lim_fp if end == "b" else -lim_fp
    if abs(beta) <= 1e-8:
        if prof.fpp_bounded:
            return cell("lim f = alpha, beta = 0, f'' bounded", YES)
        return cell("lim f = alpha, beta = 0, f'' unbounded", NO_INFO)
    if beta < 0:
        return cell("lim f = alpha, beta < 0", YES)
    return cell("lim f = alpha, beta > 0", NO_STAR)


def curvature_check(w: WarpFunction, strip: Optional[Tuple[float, float]] = None,
                    settings: SolverSettings = DEFAULT_SETTINGS) -> CurvatureReport:
    """f'' <= 0 by sampling, inextendibility at finite ends, and the strip criterion."""
    pts = np.concatenate([w.sample_points(4001), w.chebyshev_points(2001)] +
                         [w.approach_points(e, shells=20, per_shell=8, settings=settings) for e in ENDS])
    with np.errstate(all='ignore'):
        f, _, fpp = (np.asarray(v, dtype=float) for v in w._derivs(pts))
    ok = np.isfinite(fpp) & np.isfinite(f)
    scale = np.maximum(1.0, np.abs(f[ok]))
    max_fpp = float(np.max(fpp[ok] / scale)) if np.any(ok) else math.nan
    nonpositive = bool(np.any(ok)) and max_fpp <= 1e-12

    inextendible = True
    for e in ENDS:
        if not math.isfinite(w.end_value(e)):
            continue
        lim_f = w.extreme_profile(e, settings).lim_f
        if lim_f is not None and 0.0 < lim_f < math.inf:
            inextendible = False

    report = CurvatureReport(fpp_nonpositive=nonpositive, inextendible=inextendible, max_fpp=max_fpp)
    if strip is None:
        return report
    lo, hi = (float(v) for v in strip)
    if not nonpositive:
        raise PreconditionError("the strip criterion needs f'' <= 0 on the interval")
    if not (w.a <= lo < hi <= w.b) or not (w.in_closure(lo) and w.in_closure(hi)):
        raise DomainError(f"Strip ({lo}, {hi}) is not inside ({w.a}, {w.b})")
    fp_lo = float(w._derivs(lo)[1])
    fp_hi = float(w._derivs(hi)[1])
    report.strip = (lo, hi)
    report.strip_connected = fp_lo >= 0.0 >= fp_hi
    return report


def terminal_window(w: WarpFunction, end: str, settings: SolverSettings = DEFAULT_SETTINGS) -> Dict:
    """lim f and the sign of f' on the window next to an extreme where condition B fails."""
    prof = w.extreme_profile(end, settings)
    c = w.window_point(end, settings)
    pts = w.approach_points(end, shells=min(settings.k_max, 30), per_shell=8, settings=settings)
    with np.errstate(all='ignore'):
        fp = np.asarray(w._derivs(pts)[1], dtype=float)
    sign = 1.0 if end == "b" else -1.0
    fp = fp[np.isfinite(fp)]
    window = (c, w.b) if end == "b" else (w.a, c)
    return {
        "lim_f": "none" if prof.lim_f is None else _ext(prof.lim_f),
        "lim_f_in_range": prof.lim_f is not None and prof.lim_f > 0,
        "window": [_ext(v) for v in window],
        "fprime_outward_positive": bool(fp.size) and bool(np.all(sign * fp > 0)),
    }


# -- verdict --------------------------------------------------------------------

@dataclass
class ConditionReport:
    ends: Dict[str, EndReport]
    diameter: float
    R_applicable: bool
    R_verdict: str
    R_failure: Optional[Dict]
    residual_table: Optional[ResidualTable]
    curvature: CurvatureReport
    verdict: str
    reason: str
    witness: Optional[Witness] = None
    certificate: Optional[Dict] = None
    n_max: int = 8

    def to_dict(self) -> Dict:
        return {
            "ends": {e: r.to_dict() for e, r in self.ends.items()},
            "diameter": _ext(self.diameter),
            "R": {
                "applicable": self.R_applicable,
                "verdict": self.R_verdict,
                "failure": self.R_failure,
                "table": None if self.residual_table is None else self.residual_table.to_dict(self.n_max),
            },
            "curvature": self.curvature.to_dict(),
            "connected": self.verdict,
            "reason": self.reason,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "certificate": self.certificate,
        }


def classify_end(w: WarpFunction, end: str, diameter: float,
                 settings: SolverSettings = DEFAULT_SETTINGS) -> EndReport:
    profile = w.extreme_profile(end, settings)
    A, integral = condition_A(w, end, settings)
    if A:
        defect = DefectResult(applicable=False, reason="condition A holds")
        index = IndexResult(applicable=False, reason="condition A holds")
    else:
        defect = defect_d(w, end, settings)
        index = index_i(w, end, settings)
    d = defect.value if defect.applicable and defect.value is not None else None
    B = A or (d is not None and 2.0 * d >= diameter)
    if B or not index.applicable or d is None or index.value is None:
        C = B
    else:
        C = d >= index.value
    report = EndReport(end=end, profile=profile, A=A, integral_A=integral, defect=defect, index=index,
                       B=B, C=C, cell=extendibility_cell(w, end, settings))
    if not B:
        report.terminal_window = terminal_window(w, end, settings)
    logger.debug(f"end {end}: A={A} B={B} C={C} d={d} i={index.value}")
    return report


def _r_grid(w: WarpFunction, settings: SolverSettings, query_points: Sequence[float]) -> List[float]:
    grid = list(w.chebyshev_points(settings.n_grid))
    centre = float(np.median(grid))
    grid.sort(key=lambda t: abs(t - centre))
    return [float(t) for t in query_points] + [float(t) for t in grid]


def _far_point(w: WarpFunction, point: float, end: str) -> float:
    """A point strictly between ``point`` and the extreme, beyond the window."""
    e = w.end_value(end)
    if math.isfinite(e):
        return 0.5 * (point + e)
    sign = 1.0 if end == "b" else -1.0
    return 2.0 * point if sign * point > 0 else point + sign


def _unreachable_length(bands: List[Tuple[float, float]], floor: float, diameter: float) -> Optional[float]:
    """A fiber distance below diam(F) that none of the reachable bands contains."""
    sup = max((hi for _, hi in bands), default=floor)
    sup = max(sup, floor)
    if sup < diameter:
        return min(2.0 * sup + 1.0, 0.5 * (sup + diameter))
    holes = []
    cursor = floor
    for lo, hi in bands:
        if lo > cursor:
            holes.append((cursor, min(lo, diameter)))
        cursor = max(cursor, hi)
        if cursor >= diameter:
            break
    holes = [(lo, hi) for lo, hi in holes if hi > lo * (1.0 + 1e-6) + 1e-9]
    if not holes:
        return None
    lo, hi = max(holes, key=lambda h: h[1] - h[0])
    return 0.5 * (lo + hi)


def build_witness(w: WarpFunction, F: FiberGeometry, end: str, floor: float = 0.0,
                  settings: SolverSettings = DEFAULT_SETTINGS) -> Optional[Witness]:
    """Pair near a failing extreme whose fiber distance no scanned geodesic reaches."""
    tau0 = w.window_point(end, settings)
    tau1 = _far_point(w, tau0, end)
    scan = scan_arrivals(w, tau0, tau1, settings.n_max, settings)
    bands = scan.bands()
    L = _unreachable_length(bands, floor, F.diameter)
    if L is None:
        return None
    x0, x1 = F.pair_at_distance(L)
    return Witness(tau0=tau0, tau1=tau1, x0=x0, x1=x1, L=L, source=f"condition C fails at {end}",
                   bands=bands, note="unreachable within the scanned K range and bounce counts")


def candidate_windows(w: WarpFunction, settings: SolverSettings = DEFAULT_SETTINGS) -> List[float]:
    """Fixed window sizes tried for the certificate, smallest window first."""
    if math.isfinite(w.a) and math.isfinite(w.b):
        return [0.25 * (w.b - w.a), 0.1 * (w.b - w.a), w.window_eps(settings)]
    return [0.5, 1.0, settings.window_M]


def _certificate_search(w: WarpFunction, F: FiberGeometry, tau0: float,
                        settings: SolverSettings) -> Tuple[Optional[Dict], Optional[Witness]]:
    """Try fixed windows, smallest first, for a pair at distance diam(F) joined from nowhere beyond them."""
    if not math.isfinite(F.diameter):
        return None, None
    try:
        x0, x1 = F.pair_at_distance(F.diameter)
    except DomainError:
        x0, x1 = F.pair_at_distance(0.999 * F.diameter)
    for size in candidate_windows(w, settings):
        table = residual_sequences(w, tau0, settings.n_max, window=size, settings=settings, check=False)
        if table is None:
            continue
        reach = min(table.r_i(settings.n_max), table.l_i(settings.n_max))
        if not math.isfinite(reach):
            continue
        lengths = [g.length for g in F.geodesic_lengths(x0, x1, reach) if not g.is_constant]
        cert = window_certificate(table, lengths, settings.n_max)
        if cert["holds"]:
            tau1 = _far_point(w, table.window[1], "b")
            witness = Witness(tau0=tau0, tau1=tau1, x0=x0, x1=x1, L=min(lengths),
                              source="window certificate", note=f"window {size}")
            return cert, witness
    return None, None


def classify_all(w: WarpFunction, F: FiberGeometry, settings: SolverSettings = DEFAULT_SETTINGS,
                 query_points: Sequence[float] = (), witness: bool = True) -> ConditionReport:
    """Conditions A/B/C at both extremes, condition R, curvature data and the connectedness verdict."""
    diameter = F.diameter
    ends = {e: classify_end(w, e, diameter, settings) for e in ENDS}
    curvature = curvature_check(w, settings=settings)

    applicable, why = residual_applicable(w, settings)
    R_verdict, R_failure, table = "n/a", None, None
    if applicable:
        if all(ends[e].A for e in ENDS) or any(ends[e].B for e in ENDS if not ends[e].A):
            R_verdict = "holds"
        else:
            R_verdict = "holds (sampled)"
            for tau0 in _r_grid(w, settings, query_points):
                t = residual_sequences(w, tau0, settings.n_max, settings=settings, check=False)
                if t is None:
                    continue
                table = table or t
                for side in ("r", "l"):
                    gap = coverage_gap(t, side, diameter)
                    if gap is not None:
                        n, top, nxt = gap
                        R_verdict = "fails"
                        R_failure = {"tau0": tau0, "side": side, "n": n,
                                     "gap": [top, _ext(nxt)], "window": [_ext(v) for v in t.window]}
                        table = t
                        break
                if R_failure:
                    break
        if table is None and R_verdict != "fails":
            tau0 = _r_grid(w, settings, query_points)[0]
            table = residual_sequences(w, tau0, settings.n_max, settings=settings, check=False)

    C_both = all(ends[e].C for e in ENDS)
    report = ConditionReport(ends=ends, diameter=diameter, R_applicable=applicable,
                             R_verdict=R_verdict, R_failure=R_failure, residual_table=table,
                             curvature=curvature, verdict="unknown", reason="", n_max=settings.n_max)
    if C_both:
        report.verdict, report.reason = "yes", "condition C holds at both extremes"
    elif R_verdict.startswith("holds"):
        report.verdict, report.reason = "yes", f"condition R {R_verdict}"
    elif F.strongly_convex:
        report.verdict, report.reason = "no", "conditions C and R fail on a strongly convex fiber"
        if witness:
            report.witness = _strong_witness(w, F, ends, R_failure, settings)
            if report.witness is None:
                report.reason += "; witness unconfirmed"
    else:
        tau0 = (R_failure or {}).get("tau0", _r_grid(w, settings, query_points)[0])
        cert, wit = (None, None)
        if applicable and witness:
            cert, wit = _certificate_search(w, F, tau0, settings)
        report.certificate = cert
        if cert is not None:
            report.verdict, report.reason = "no", "window certificate holds for an antipodal pair"
            report.witness = wit
        else:
            report.reason = "conditions C and R fail on a fiber that is only weakly convex"
    logger.info(f"Connectedness verdict: {report.verdict} ({report.reason})")
    return report


def _strong_witness(w: WarpFunction, F: FiberGeometry, ends: Dict[str, EndReport],
                    R_failure: Optional[Dict], settings: SolverSettings) -> Optional[Witness]:
    if R_failure is not None:
        top, nxt = R_failure["gap"][0], R_failure["gap"][1]
        nxt = float(nxt)
        L = min(0.5 * (top + nxt), 0.5 * (top + F.diameter)) if math.isfinite(nxt) \
            else 0.5 * (top + min(F.diameter, 2.0 * top + 1.0))
        end = "b" if R_failure["side"] == "r" else "a"
        window = R_failure["window"]
        edge = float(window[1]) if end == "b" else float(window[0])
        x0, x1 = F.pair_at_distance(L)
        return Witness(tau0=R_failure["tau0"], tau1=_far_point(w, edge, end), x0=x0, x1=x1, L=L,
                       source=f"condition R fails on the {R_failure['side']} side")
    for e in ENDS:
        if not ends[e].C:
            d = ends[e].defect.value if ends[e].defect.applicable else None
            floor = 2.0 * d if d is not None and math.isfinite(d) else 0.0
            return build_witness(w, F, e, floor=floor, settings=settings)
    return None
