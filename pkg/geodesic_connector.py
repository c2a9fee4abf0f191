#!/usr/bin/env python3
"""
Causal relations and connecting geodesics between two spacetime points.

A geodesic from z0 = (tau0, x0) to z1 = (tau1, x1) is fixed by a fiber
geodesic of length L joining x0 to x1 and by the parameter
K = 1/f^2(tau0) - D (epsilon = +1) or D - 1/f^2(tau0) (epsilon = -1).
The solver scans K, follows the arrival arclength at tau1 on every leg
along each continuity run, and refines sign changes of (arrival - L).

Features:
- Causal relation from the time budget (integral of 1/f) against the
  fiber distance, with a tolerance band reported as such
- All connecting geodesics up to L_max and n_max bounces, including the
  constant-tau geodesics at critical levels and the base geodesics
- Sampled curves (t, tau, r, fiber position) with endpoint residuals
- Uniqueness of causal connections on strongly convex fibers
- Window unions near the extremes and the non-joinability certificate
- Static dual reading for one-dimensional fibers
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from bounce_integrals import (ARCLENGTH, TIME, AdvanceResult, advance, arrival_lengths,
                              cumulative_integrals, decode_K, scan_arrivals,
                              segment_integral, turning_points)
from connectedness_conditions import (candidate_windows, classify_all, residual_sequences,
                                      window_certificate)
from fiber_geometry import FiberGeodesic, FiberGeometry, FiberPoint
from grw_errors import DomainError, PreconditionError
from solver_settings import DEFAULT_SETTINGS, SolverSettings, format_extended
from warp_function import WarpFunction

logger = logging.getLogger(__name__)

TIMELIKE = "timelike"
LIGHTLIKE = "lightlike"
LIGHTLIKE_TOL = "lightlike within tolerance"
SPACELIKE = "spacelike"

NOTE_CRITICAL = "critical_level"
NOTE_BASE = "base"
NOTE_PLATEAU = "plateau"

L_BUDGET_CAP = 1e12


@dataclass(frozen=True)
class SpacetimePoint:
    tau: float
    x: FiberPoint

    @classmethod
    def parse(cls, text: str, F: FiberGeometry) -> "SpacetimePoint":
        """Read "tau,x1,...,xk" as typed on the command line."""
        try:
            values = [float(v) for v in text.replace(" ", "").split(",") if v]
        except ValueError:
            raise DomainError(f"Cannot read a point from {text!r}")
        if len(values) < 2:
            raise DomainError(f"A point needs tau and fiber coordinates, got {text!r}")
        return cls(values[0], F.point(values[1:]))

    def to_list(self) -> List[float]:
        return [self.tau] + self.x.to_list()


@dataclass(frozen=True)
class RelationKind:
    kind: str
    direction: str
    time_budget: float
    distance: float

    @property
    def causal(self) -> bool:
        return self.kind != SPACELIKE

    @property
    def chronological(self) -> bool:
        return self.kind == TIMELIKE

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "direction": self.direction,
            "time_budget": format_extended(self.time_budget),
            "distance": format_extended(self.distance),
        }


@dataclass
class GeodesicSpec:
    """Data fixing one connecting geodesic"""

    tau0: float
    tau1: float
    D: float
    epsilon: int
    K: Optional[float]
    n: int
    L: float
    fiber_geodesic: FiberGeodesic
    c: float = 1.0
    note: Optional[str] = None
    residual: float = 0.0

    @property
    def character(self) -> str:
        tol = 1e-12 * max(1.0, abs(self.D))
        if self.D < -tol:
            return TIMELIKE
        if self.D > tol:
            return SPACELIKE
        return LIGHTLIKE

    def sort_key(self):
        return (self.L, self.epsilon, self.n, self.D)

    def to_dict(self) -> Dict:
        return {
            "D": self.D,
            "c": self.c,
            "epsilon": self.epsilon,
            "K": self.K,
            "n": self.n,
            "L": self.L,
            "character": self.character,
            "fiber_geodesic": self.fiber_geodesic.to_dict(),
            "note": self.note,
            "residual": self.residual,
        }


@dataclass
class GeodesicCurve:
    t: np.ndarray
    tau: np.ndarray
    r: np.ndarray
    positions: List[FiberPoint]
    D: float
    character: str
    residual: float

    def rows(self) -> List[List[float]]:
        """(t, tau, r, fiber coordinates...) per sample for CSV output."""
        return [[float(t), float(tau), float(r)] + x.to_list()
                for t, tau, r, x in zip(self.t, self.tau, self.r, self.positions)]

    def to_dict(self) -> Dict:
        return {
            "D": self.D,
            "character": self.character,
            "residual": self.residual,
            "samples": len(self.t),
            "t_end": float(self.t[-1]),
            "tau_range": [float(self.tau.min()), float(self.tau.max())],
            "r_end": float(self.r[-1]),
        }


# -- relations -------------------------------------------------------------------

def time_budget(w: WarpFunction, tau0: float, tau1: float,
                settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Integral of 1/f between two base points (the fiber distance a causal curve can cover)."""
    lo, hi = sorted((tau0, tau1))
    if lo == hi:
        return 0.0
    value = segment_integral(w, lo, hi, 0.0, settings)
    return value.value if value.is_finite else math.inf


def relate(w: WarpFunction, F: FiberGeometry, z0: SpacetimePoint, z1: SpacetimePoint,
           settings: SolverSettings = DEFAULT_SETTINGS) -> RelationKind:
    w.check_point(z0.tau)
    w.check_point(z1.tau)
    direction = "future" if z1.tau >= z0.tau else "past"
    budget = time_budget(w, z0.tau, z1.tau, settings)
    d = F.distance(z0.x, z1.x)
    band = settings.tol_rel * max(1.0, d)
    if budget == d:
        kind = LIGHTLIKE
    elif abs(budget - d) <= band:
        kind = LIGHTLIKE_TOL
    elif budget > d:
        kind = TIMELIKE
    else:
        kind = SPACELIKE
    logger.debug(f"relate: budget {budget:.12g} vs distance {d:.12g} -> {kind}")
    return RelationKind(kind, direction, budget, d)


def tau_of_K(w: WarpFunction, tau0: float, L: float, K: float,
             settings: SolverSettings = DEFAULT_SETTINGS) -> AdvanceResult:
    """Base point reached at fiber arclength L by the geodesic with parameter K."""
    D, eps = decode_K(w, tau0, K)
    if L <= 0.0:
        return AdvanceResult(tau0, 0, "reached", 0.0, eps)
    return advance(w, tau0, D, eps, L, settings)


# -- connections ---------------------------------------------------------------

def default_L_max(w: WarpFunction, F: FiberGeometry, z0: SpacetimePoint, z1: SpacetimePoint,
                  settings: SolverSettings) -> float:
    if settings.L_max is not None:
        return settings.L_max
    d = F.distance(z0.x, z1.x)
    base = 4.0 * F.diameter if math.isfinite(F.diameter) else 4.0 * max(1.0, d)
    budget = time_budget(w, z0.tau, z1.tau, settings)
    return base + (budget if math.isfinite(budget) else 0.0)


def _accept(w: WarpFunction, tau0: float, tau1: float, L: float, K: float,
            settings: SolverSettings) -> Optional[AdvanceResult]:
    try:
        reached = tau_of_K(w, tau0, L, K, settings)
    except PreconditionError:
        return None
    if reached.status != "reached":
        return None
    if abs(reached.tau_end - tau1) > settings.tol_accept * max(1.0, abs(tau1)):
        return None
    return reached


def _arrival(w: WarpFunction, tau0: float, tau1: float, K: float, n: int,
             settings: SolverSettings) -> float:
    D, eps = decode_K(w, tau0, K)
    try:
        value = arrival_lengths(w, tau0, tau1, D, eps, n, settings)[n]
    except PreconditionError:
        return math.nan
    return math.nan if value is None else value


def _roots_on_run(w: WarpFunction, tau0: float, tau1: float, K: np.ndarray, values: np.ndarray,
                  n: int, L: float, settings: SolverSettings, stats: Dict) -> List[tuple]:
    """(K, note) candidates where the arrival on leg n crosses L along one continuity run."""
    out = []
    g = values - L
    flat = np.abs(g) < settings.tol_accept * max(1.0, L)
    j = 0
    while j < g.size:
        if flat[j]:
            k = j
            while k + 1 < g.size and flat[k + 1]:
                k += 1
            if k - j + 1 >= 3:
                out.append((float(K[(j + k) // 2]), NOTE_PLATEAU))
                stats["plateaus"] += 1
            else:
                out.extend((float(K[i]), None) for i in range(j, k + 1))
            j = k + 1
            continue
        if j + 1 < g.size and not flat[j + 1] and g[j] * g[j + 1] < 0:
            fn = lambda k_: _arrival(w, tau0, tau1, k_, n, settings) - L
            try:
                root = brentq(fn, float(K[j]), float(K[j + 1]), xtol=settings.tol_root * max(1.0, abs(K[j])),
                              rtol=4 * np.finfo(float).eps)
            except (ValueError, RuntimeError):
                # arrival is not finite inside the bracket; fall back to the linear estimate
                root = float(K[j] - g[j] * (K[j + 1] - K[j]) / (g[j + 1] - g[j]))
            out.append((float(root), None))
        j += 1
    return out


def _extended_K_max(w: WarpFunction, tau0: float, tau1: float, L_min: float,
                    settings: SolverSettings) -> float:
    """Grow K_max while the leg-0 arrival at the largest |K| still exceeds the shortest length."""
    K_max = settings.K_max
    if tau1 == tau0:
        return K_max
    p0 = float(w.level(tau0))
    sign = 1.0 if tau1 > tau0 else -1.0
    while K_max < L_BUDGET_CAP:
        a0 = _arrival(w, tau0, tau1, sign * K_max * p0, 0, settings)
        if not a0 >= L_min:
            break
        K_max *= 10.0
    if K_max != settings.K_max:
        logger.debug(f"K_max extended to {K_max:g} for L = {L_min:.6g}")
    return K_max


def _dedupe(specs: List[GeodesicSpec]) -> List[GeodesicSpec]:
    seen = {}
    for spec in specs:
        scale = max(1.0, abs(spec.D))
        key = (round(spec.L, 9), spec.epsilon, spec.n, round(spec.D / scale, 7))
        if key not in seen or spec.residual < seen[key].residual:
            seen[key] = spec
    return sorted(seen.values(), key=GeodesicSpec.sort_key)


def solve_connection(w: WarpFunction, F: FiberGeometry, z0: SpacetimePoint, z1: SpacetimePoint,
                     settings: SolverSettings = DEFAULT_SETTINGS,
                     stats: Optional[Dict] = None) -> List[GeodesicSpec]:
    """Every connecting geodesic with fiber length <= L_max and at most n_max bounces."""
    stats = stats if stats is not None else {}
    for key in ("pairs", "specs", "rejected_roots", "plateaus"):
        stats.setdefault(key, 0)
    stats["pairs"] += 1
    w.check_point(z0.tau)
    w.check_point(z1.tau)
    if not F.pair_weakly_convex(z0.x, z1.x):
        raise PreconditionError("the fiber points are not joined by a minimizing geodesic inside the fiber")

    tau0, tau1 = z0.tau, z1.tau
    L_max = default_L_max(w, F, z0, z1, settings)
    fiber_geodesics = F.geodesic_lengths(z0.x, z1.x, L_max)
    p0, dp0, _ = (float(v) for v in w.level_derivs(tau0))
    critical = tau0 == tau1 and abs(dp0) <= 1e-8 * p0

    specs: List[GeodesicSpec] = []
    moving = [g for g in fiber_geodesics if not g.is_constant]
    for g in fiber_geodesics:
        if g.is_constant and tau0 != tau1:
            specs.append(GeodesicSpec(tau0, tau1, D=-1.0, epsilon=1 if tau1 > tau0 else -1, K=None,
                                      n=0, L=0.0, fiber_geodesic=g, c=0.0, note=NOTE_BASE))
        if critical and not g.is_constant:
            specs.append(GeodesicSpec(tau0, tau1, D=p0, epsilon=1, K=0.0, n=0, L=g.length,
                                      fiber_geodesic=g, note=NOTE_CRITICAL))

    if moving:
        L_min = min(g.length for g in moving)
        K_max = _extended_K_max(w, tau0, tau1, L_min, settings)
        scan = scan_arrivals(w, tau0, tau1, settings.n_max, settings.with_overrides(K_max=K_max))
        for g in moving:
            L = g.length
            for n in range(settings.n_max + 1):
                for run in scan.runs(n):
                    for K, note in _roots_on_run(w, tau0, tau1, scan.K[run], scan.lengths[n, run],
                                                 n, L, settings, stats):
                        reached = _accept(w, tau0, tau1, L, K, settings)
                        if reached is None:
                            stats["rejected_roots"] += 1
                            continue
                        D, eps = decode_K(w, tau0, K)
                        specs.append(GeodesicSpec(tau0, tau1, D=D, epsilon=eps, K=K, n=n, L=L,
                                                  fiber_geodesic=g, note=note,
                                                  residual=abs(reached.tau_end - tau1)))
    specs = _dedupe(specs)
    stats["specs"] += len(specs)
    logger.info(f"Found {len(specs)} connecting geodesics (L_max = {L_max:.6g}, n_max = {settings.n_max})")
    return specs


# -- curves --------------------------------------------------------------------

def _leg_nodes(start: float, end: float, count: int) -> np.ndarray:
    """Nodes from start to end clustered at both ends of the leg."""
    s = 0.5 * (1.0 - np.cos(np.linspace(0.0, math.pi, count + 1)))
    return start + (end - start) * s


def build_geodesic(w: WarpFunction, F: FiberGeometry, spec: GeodesicSpec, z0: SpacetimePoint,
                   z1: Optional[SpacetimePoint] = None, samples: int = 200,
                   settings: SolverSettings = DEFAULT_SETTINGS) -> GeodesicCurve:
    """Sample the geodesic of a spec as (t, tau, r, fiber position)."""
    g = spec.fiber_geodesic
    target = z1.x if z1 is not None else g.end

    if spec.note == NOTE_BASE:
        t = np.linspace(0.0, abs(spec.tau1 - spec.tau0), samples)
        tau = spec.tau0 + np.sign(spec.tau1 - spec.tau0) * t
        r = np.zeros_like(t)
        positions = [z0.x] * t.size
        residual = abs(tau[-1] - spec.tau1) + F.distance(z0.x, target)
        return GeodesicCurve(t, tau, r, positions, spec.D, "timelike", float(residual))

    if spec.note == NOTE_CRITICAL:
        p0 = float(w.level(spec.tau0))
        t = np.linspace(0.0, spec.L / p0, samples)
        r = p0 * t
        tau = np.full_like(t, spec.tau0)
        positions = [F.position_at(g, float(x)) for x in r]
        residual = F.distance(positions[-1], target)
        return GeodesicCurve(t, tau, r, positions, spec.D, spec.character, float(residual))

    tp = turning_points(w, spec.tau0, spec.D, settings)
    per_leg = max(8, samples // (spec.n + 1))
    legs = []
    pos, direction = spec.tau0, spec.epsilon
    for _ in range(spec.n):
        turn = tp.b_star if direction > 0 else tp.a_star
        if not math.isfinite(turn):
            raise PreconditionError(f"spec bounces at an infinite end ({turn})")
        legs.append((pos, turn))
        pos, direction = turn, -direction
    legs.append((pos, spec.tau1))

    t_parts, tau_parts, r_parts = [], [], []
    t_off = r_off = 0.0
    for k, (start, end) in enumerate(legs):
        nodes = _leg_nodes(start, end, per_leg)
        r_leg = cumulative_integrals(w, nodes, spec.D, ARCLENGTH, settings) + r_off
        t_leg = cumulative_integrals(w, nodes, spec.D, TIME, settings) + t_off
        if k > 0:
            nodes, r_leg, t_leg = nodes[1:], r_leg[1:], t_leg[1:]
        tau_parts.append(nodes)
        r_parts.append(r_leg)
        t_parts.append(t_leg)
        r_off, t_off = float(r_leg[-1]), float(t_leg[-1])
    tau = np.concatenate(tau_parts)
    raw = np.concatenate(r_parts)
    r = np.maximum.accumulate(raw)
    # r is monotone; any setback in the raw sums counts against the residual
    setback = float(np.max(r - raw))
    if setback > 0.0:
        logger.warning(f"fiber arclength decreases by up to {setback:.3g} along the samples")
    t = np.concatenate(t_parts)
    positions = [F.position_at(g, float(min(x, spec.L))) for x in r]
    residual = abs(r[-1] - spec.L) + F.distance(F.position_at(g, float(r[-1])), target) + setback
    if residual > settings.tol_accept * max(1.0, spec.L):
        logger.warning(f"geodesic endpoint residual {residual:.3g} above tolerance")
    return GeodesicCurve(t, tau, r, positions, spec.D, spec.character, float(residual))


# -- uniqueness ----------------------------------------------------------------

def causal_uniqueness(w: WarpFunction, F: FiberGeometry, z0: SpacetimePoint, z1: SpacetimePoint,
                      settings: SolverSettings = DEFAULT_SETTINGS) -> Dict:
    """Unique causal connector on a strongly convex fiber, by monotone root-finding in D."""
    if not F.strongly_convex:
        raise PreconditionError(f"causal uniqueness needs a strongly convex fiber, got {F.family}")
    relation = relate(w, F, z0, z1, settings)
    if not relation.causal:
        raise PreconditionError("the points are not causally related")
    d = relation.distance
    lo, hi = sorted((z0.tau, z1.tau))

    def excess(D: float) -> float:
        return segment_integral(w, lo, hi, D, settings).value - d

    report = {"relation": relation.to_dict(), "distance": d}
    if d == 0.0:
        report.update({"D0": None, "kind": "base", "monotone": True})
    elif relation.kind in (LIGHTLIKE, LIGHTLIKE_TOL):
        report.update({"D0": 0.0, "kind": LIGHTLIKE, "monotone": True})
    else:
        D_lo = -1.0
        for _ in range(200):
            if excess(D_lo) < 0.0:
                break
            D_lo *= 2.0
        D0 = float(brentq(excess, D_lo, 0.0, xtol=settings.tol_root, rtol=4 * np.finfo(float).eps))
        grid = np.linspace(D_lo, 0.0, 64)
        values = np.array([excess(float(D)) for D in grid])
        report.update({"D0": D0, "kind": TIMELIKE, "residual": abs(excess(D0)),
                       "monotone": bool(np.all(np.diff(values) > 0)),
                       "bracket": [D_lo, 0.0]})

    specs = solve_connection(w, F, z0, z1, settings)
    spacelike = [s for s in specs if s.character == SPACELIKE]
    report["specs"] = [s.to_dict() for s in specs]
    report["spacelike_connectors"] = len(spacelike)
    D0 = report["D0"]
    # the single connector must be the one the monotone root-finding predicts
    report["D_match"] = bool(len(specs) == 1 and (
        D0 is None or abs(specs[0].D - D0) <= settings.tol_accept * max(1.0, abs(D0))))
    report["unique"] = len(specs) == 1 and not spacelike and report["D_match"]
    if not report["unique"]:
        logger.warning(f"causal pair has {len(specs)} connectors ({len(spacelike)} spacelike), "
                       f"D0 = {D0}, connector D = {[s.D for s in specs]}")
    return report


# -- windows and the static dual ----------------------------------------------------

def obstruction_windows(w: WarpFunction, tau0: float, window: Optional[float] = None,
                        F: Optional[FiberGeometry] = None, x0: Optional[FiberPoint] = None,
                        x1: Optional[FiberPoint] = None,
                        settings: SolverSettings = DEFAULT_SETTINGS) -> Dict:
    """
    Window unions A (right side) and B (left side) at tau0, with the
    length set of a fiber pair tested against them when one is given.
    ``window`` None sends the window to the extremes.
    """
    table = residual_sequences(w, tau0, settings.n_max, window=window, settings=settings)
    if table is None:
        return {"applicable": False}
    n_max = settings.n_max
    report = {"applicable": True, "table": table.to_dict(n_max)}
    if F is None or x0 is None or x1 is None:
        return report
    reach = min(table.r_i(n_max), table.l_i(n_max))
    cap = reach if math.isfinite(reach) else default_L_max(w, F, SpacetimePoint(tau0, x0),
                                                           SpacetimePoint(tau0, x1), settings)
    lengths = [g.length for g in F.geodesic_lengths(x0, x1, cap) if not g.is_constant]
    report["lengths"] = lengths
    report["certificate"] = window_certificate(table, lengths, n_max)
    unions = (table.union("r", n_max), table.union("l", n_max))
    report["joinable_middle"] = [L for L in lengths
                                 if all(any(lo <= L <= hi for lo, hi in u) for u in unions)]
    return report


STATIC_RELABEL = {TIMELIKE: SPACELIKE, SPACELIKE: TIMELIKE, LIGHTLIKE: LIGHTLIKE, LIGHTLIKE_TOL: LIGHTLIKE_TOL}


def static_dual(w: WarpFunction, F: FiberGeometry, z0: SpacetimePoint, z1: SpacetimePoint,
                settings: SolverSettings = DEFAULT_SETTINGS) -> Dict:
    """Read the data as the static metric dy^2 - f^2 dx^2 on a one-dimensional fiber."""
    if F.dim != 1:
        raise PreconditionError(f"the static dual needs a one-dimensional fiber, got dim {F.dim}")
    relation = relate(w, F, z0, z1, settings)
    static_kind = STATIC_RELABEL[relation.kind]
    specs = solve_connection(w, F, z0, z1, settings)
    geodesics = []
    for spec in specs:
        entry = spec.to_dict()
        entry["D_static"] = -spec.D
        entry["character"] = STATIC_RELABEL[spec.character]
        geodesics.append(entry)
    report = {
        "relation": static_kind,
        "warped_relation": relation.to_dict(),
        "geodesics": geodesics,
        "unique": len(specs) == 1,
    }
    if static_kind == TIMELIKE:
        verdict = classify_all(w, F, settings, query_points=(z0.tau, z1.tau), witness=False)
        report["connected_verdict"] = verdict.verdict
    return report


class GeodesicConnector:
    """Runs relation, connection and curve requests for one spacetime and keeps counters"""

    def __init__(self, w: WarpFunction, F: FiberGeometry, settings: SolverSettings = DEFAULT_SETTINGS):
        self.w = w
        self.F = F
        self.settings = settings
        self.stats = {
            'pairs': 0,
            'specs': 0,
            'rejected_roots': 0,
            'plateaus': 0,
            'curves': 0,
        }

    def relate(self, z0: SpacetimePoint, z1: SpacetimePoint) -> RelationKind:
        return relate(self.w, self.F, z0, z1, self.settings)

    def connect(self, z0: SpacetimePoint, z1: SpacetimePoint) -> List[GeodesicSpec]:
        return solve_connection(self.w, self.F, z0, z1, self.settings, stats=self.stats)

    def curves(self, specs: Sequence[GeodesicSpec], z0: SpacetimePoint, z1: SpacetimePoint,
               samples: int = 200) -> List[GeodesicCurve]:
        out = []
        for spec in specs:
            out.append(build_geodesic(self.w, self.F, spec, z0, z1, samples, self.settings))
            self.stats['curves'] += 1
        return out

    def connection_report(self, z0: SpacetimePoint, z1: SpacetimePoint,
                          specs: Optional[Sequence[GeodesicSpec]] = None) -> Dict:
        """Relation, geodesic list and, when none is found near the extremes, the window certificate."""
        relation = self.relate(z0, z1)
        if specs is None:
            specs = self.connect(z0, z1)
        report = {
            "z0": z0.to_list(),
            "z1": z1.to_list(),
            "relation": relation.to_dict(),
            "geodesics": [s.to_dict() for s in specs],
        }
        if not specs:
            for window in candidate_windows(self.w, self.settings):
                windows = obstruction_windows(self.w, z0.tau, window, self.F, z0.x, z1.x, self.settings)
                if windows.get("certificate", {}).get("holds"):
                    report["certificate"] = windows["certificate"]
                    break
        return report

    def print_summary(self):
        logger.info("=" * 50)
        logger.info("CONNECTION SUMMARY")
        logger.info("=" * 50)
        logger.info(f"Point pairs solved: {self.stats['pairs']}")
        logger.info(f"Geodesics found: {self.stats['specs']}")
        logger.info(f"Rejected roots: {self.stats['rejected_roots']}")
        logger.info(f"Plateau representatives: {self.stats['plateaus']}")
        logger.info(f"Curves sampled: {self.stats['curves']}")
