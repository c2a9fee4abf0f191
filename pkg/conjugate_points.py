#!/usr/bin/env python3
"""
Conjugate points, Morse indexes and Morse relations of connecting geodesics.

Along a connecting geodesic the Jacobi fields split into fiber modes,
whose zeros follow the conjugate schedule of the fiber geodesic, and one
base mode. The base mode cannot vanish along a geodesic whose base
velocity never vanishes (causal geodesics and monotone legs), so there
the spacetime multiplicity equals the fiber multiplicity; otherwise it
lies in {m', m' + 1} and is reported as that band.

Features:
- Sturm equation a'' = (f''/f) a from a zero of a, with the first zero located
- Spectral flow of the Dirichlet problem for a'' - (f''/f) a + lambda a = 0
- Conjugate reports per connecting geodesic, exact or banded
- Morse coefficients of the spacetime and of the fiber, path-space Betti
  numbers, the quotient polynomial and the Morse inequalities
- Non-escape tests for timelike and null geodesics, and the covering premise
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from bounce_integrals import advance, segment_integral
from connectedness_conditions import classify_end
from fiber_geometry import FiberGeometry
from geodesic_connector import (NOTE_BASE, NOTE_CRITICAL, GeodesicSpec, SpacetimePoint,
                                default_L_max, solve_connection)
from grw_errors import DomainError, PreconditionError
from solver_settings import DEFAULT_SETTINGS, SolverSettings
from warp_function import ENDS, WarpFunction

logger = logging.getLogger(__name__)

STURM_SAMPLES = 4097
CONJUGATE_END_TOL = 1e-9


def _sturm_coefficient(w: WarpFunction, tau):
    f, _, fpp = w._derivs(tau)
    return fpp / f


def _jacobi(w: WarpFunction, tau0: float, tau1: float, lam: float = 0.0, samples: int = STURM_SAMPLES):
    """Solution of a'' = (f''/f - lam) a with a(tau0) = 0, a'(tau0) = 1."""
    def rhs(t, y):
        return [y[1], (float(_sturm_coefficient(w, t)) - lam) * y[0]]

    grid = np.linspace(tau0, tau1, samples)
    return solve_ivp(rhs, (tau0, tau1), [0.0, 1.0], method='DOP853', t_eval=grid,
                     dense_output=True, rtol=1e-10, atol=1e-12)


def sturm_solve(w: WarpFunction, tau0: float, tau1: float,
                settings: SolverSettings = DEFAULT_SETTINGS) -> Optional[float]:
    """First zero of the Sturm solution in (tau0, tau1], or None."""
    w.check_point(tau0)
    w.check_point(tau1)
    if tau0 == tau1:
        return None
    sol = _jacobi(w, tau0, tau1)
    a = sol.y[0]
    sign = 1.0 if tau1 > tau0 else -1.0
    # a starts with the sign of tau - tau0
    values = sign * a[1:]
    below = np.nonzero(values <= 0.0)[0]
    if below.size == 0:
        return None
    j = int(below[0]) + 1
    lo, hi = float(sol.t[j - 1]), float(sol.t[j])
    if values[j - 1] == 0.0:
        return hi
    root = brentq(lambda t: float(sol.sol(t)[0]), min(lo, hi), max(lo, hi), xtol=settings.tol_root)
    logger.debug(f"Sturm solution from {tau0} vanishes at {root}")
    return float(root)


def _first_mode_passed(w: WarpFunction, tau0: float, tau: float, lam: float) -> bool:
    sol = _jacobi(w, tau0, tau, lam, samples=513)
    a = sol.y[0]
    return bool(np.any(a[1:-1] <= 0.0) or a[-1] < 0.0)


def spectral_flow(w: WarpFunction, tau0: float, taus: Sequence[float],
                  settings: SolverSettings = DEFAULT_SETTINGS) -> List[Tuple[float, float]]:
    """Lowest Dirichlet eigenvalue on [tau0, tau] for every tau, sorted by tau."""
    w.check_point(tau0)
    out = []
    for tau in sorted(float(t) for t in taus):
        w.check_point(tau)
        if not tau > tau0:
            raise DomainError(f"spectral flow needs tau > tau0, got {tau} <= {tau0}")
        ell = tau - tau0
        q = np.asarray(_sturm_coefficient(w, np.linspace(tau0, tau, 1025)), dtype=float)
        lo = (math.pi / ell) ** 2 + float(q.min()) - 1e-9
        hi = (math.pi / ell) ** 2 + float(q.max()) + 1e-9
        for _ in range(200):
            if hi - lo <= settings.tol_root * max(1.0, abs(hi)):
                break
            mid = 0.5 * (lo + hi)
            if _first_mode_passed(w, tau0, tau, mid):
                hi = mid
            else:
                lo = mid
        lam = 0.5 * (lo + hi)
        try:
            lam = brentq(lambda x: float(_jacobi(w, tau0, tau, x, samples=2).y[0][-1]), lo, hi,
                         xtol=1e-14)
        except ValueError:
            pass
        out.append((tau, float(lam)))
    values = [lam for _, lam in out]
    if any(b >= a for a, b in zip(values, values[1:])):
        logger.warning("spectral flow is not strictly decreasing on the requested grid")
    return out


# -- conjugate reports ----------------------------------------------------------

@dataclass
class ConjugateEntry:
    r: float
    tau: float
    fiber_multiplicity: int
    multiplicity: Optional[int]
    band: Optional[Tuple[int, int]] = None
    source: str = "fiber"

    @property
    def lower(self) -> int:
        return self.multiplicity if self.multiplicity is not None else self.band[0]

    def to_dict(self) -> Dict:
        return {
            "r": self.r,
            "tau": self.tau,
            "fiber_multiplicity": self.fiber_multiplicity,
            "multiplicity": self.multiplicity if self.multiplicity is not None else list(self.band),
            "exact": self.multiplicity is not None,
            "source": self.source,
        }


@dataclass
class ConjugateReport:
    entries: List[ConjugateEntry] = field(default_factory=list)
    exact: bool = True
    truncated: bool = False
    non_escape: Dict = field(default_factory=dict)
    sturm_check: Optional[bool] = None

    @property
    def morse_index(self) -> int:
        """Sum of multiplicities, taking the lower end of every band."""
        return sum(e.lower for e in self.entries)

    def to_dict(self) -> Dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "exact": self.exact,
            "truncated": self.truncated,
            "morse_index": self.morse_index,
            "non_escape": self.non_escape,
            "sturm_check": self.sturm_check,
        }


def _check_endpoint(schedule: List[Tuple[float, int]], L: float):
    for r, _ in schedule:
        if abs(r - L) <= CONJUGATE_END_TOL * max(1.0, L):
            raise PreconditionError(f"the endpoints are conjugate along the fiber geodesic (r = {r:.12g}); "
                                    "perturb one of the points")


def _off_level(w: WarpFunction, tau: float, D: float, settings: SolverSettings) -> bool:
    return abs(float(w.level(tau)) - D) > settings.tol_level * max(1.0, abs(D))


def conjugate_points(w: WarpFunction, F: FiberGeometry, spec: GeodesicSpec,
                     settings: SolverSettings = DEFAULT_SETTINGS) -> ConjugateReport:
    """Conjugate points of z0 along the geodesic of a spec, strictly before its end."""
    report = ConjugateReport(non_escape=non_escape(w, settings))
    g = spec.fiber_geodesic
    if spec.note == NOTE_BASE:
        report.sturm_check = sturm_solve(w, spec.tau0, spec.tau1, settings) is None
        return report

    schedule = F.conjugate_schedule(g)
    _check_endpoint(schedule, spec.L)
    inside = [(r, mu) for r, mu in schedule if 0.0 < r < spec.L]

    if spec.note == NOTE_CRITICAL:
        p0 = float(w.level(spec.tau0))
        ddp = float(w.level_second(spec.tau0))
        merged: Dict[float, List[int]] = {r: [mu, 0] for r, mu in inside}
        if ddp < 0:
            step = math.pi * p0 / math.sqrt(-0.5 * ddp)
            if abs(spec.L / step - round(spec.L / step)) * step <= CONJUGATE_END_TOL * max(1.0, spec.L):
                raise PreconditionError("the endpoints are conjugate along the base mode; perturb one of the points")
            k = 1
            while k * step < spec.L:
                key = next((r for r in merged if abs(r - k * step) <= 1e-12 * max(1.0, r)), k * step)
                merged.setdefault(key, [0, 0])[1] += 1
                k += 1
        for r in sorted(merged):
            mu, base = merged[r]
            report.entries.append(ConjugateEntry(r=r, tau=spec.tau0, fiber_multiplicity=mu,
                                                 multiplicity=mu + base,
                                                 source="fiber+base" if mu and base else ("base" if base else "fiber")))
        return report

    exact = spec.D <= 0.0 or (spec.n == 0 and _off_level(w, spec.tau0, spec.D, settings)
                               and _off_level(w, spec.tau1, spec.D, settings))
    report.exact = exact
    for r, mu in inside:
        reached = advance(w, spec.tau0, spec.D, spec.epsilon, r, settings)
        if reached.status != "reached":
            report.truncated = True
            break
        if exact:
            report.entries.append(ConjugateEntry(r, reached.tau_end, mu, mu))
        else:
            report.entries.append(ConjugateEntry(r, reached.tau_end, mu, None, band=(mu, mu + 1)))
    return report


# -- non-escape and covering ---------------------------------------------------------

def _tail_diverges(w: WarpFunction, end: str, D: float, settings: SolverSettings) -> bool:
    c = w.window_point(end, settings)
    e = w.end_value(end)
    value = segment_integral(w, c, e, D, settings) if end == "b" else segment_integral(w, e, c, D, settings)
    return value.is_divergent


def non_escape(w: WarpFunction, settings: SolverSettings = DEFAULT_SETTINGS) -> Dict:
    """Divergence at each extreme of the arclength integrals with D = -1 (timelike) and D = 0 (null)."""
    return {
        "timelike": {e: _tail_diverges(w, e, -1.0, settings) for e in ENDS},
        "null": {e: _tail_diverges(w, e, 0.0, settings) for e in ENDS},
    }


def covering_premise(w: WarpFunction, F: FiberGeometry, settings: SolverSettings = DEFAULT_SETTINGS) -> Dict:
    """Complete conjugate-free fiber and null non-escape at both extremes."""
    escape = non_escape(w, settings)
    failing = []
    if not F.complete:
        failing.append("fiber is not complete")
    if not F.conjugate_free:
        failing.append("fiber has conjugate points")
    for e in ENDS:
        if not escape["null"][e]:
            failing.append(f"null geodesics escape at {e}")
    return {
        "premise": not failing,
        "fiber_complete": F.complete,
        "fiber_conjugate_free": F.conjugate_free,
        "non_escape": escape,
        "failing": failing,
    }


# -- Morse relations ---------------------------------------------------------------

@dataclass
class MorseReport:
    spacetime: List[int]
    fiber: List[int]
    betti: List[int]
    quotient: List[int]
    hypotheses_verified: bool
    inequalities: Dict = field(default_factory=dict)
    specs: int = 0
    L_max: float = math.nan

    @property
    def quotient_nonnegative(self) -> bool:
        return all(q >= 0 for q in self.quotient)

    @property
    def label(self) -> str:
        return "hypotheses verified" if self.hypotheses_verified else "hypotheses unverified"

    def to_dict(self) -> Dict:
        return {
            "spacetime_coefficients": self.spacetime,
            "fiber_coefficients": self.fiber,
            "betti": self.betti,
            "quotient": self.quotient,
            "quotient_nonnegative": self.quotient_nonnegative,
            "inequalities": self.inequalities,
            "label": self.label,
            "specs": self.specs,
            "L_max": self.L_max,
        }


def _morse_hypotheses(w: WarpFunction, F: FiberGeometry, settings: SolverSettings) -> bool:
    for e in ENDS:
        report = classify_end(w, e, F.diameter, settings)
        d = report.defect.value if report.defect.applicable else None
        if not (report.A or (report.B and d is not None and math.isinf(d))):
            return False
    return True


def morse_polynomials(w: WarpFunction, F: FiberGeometry, z0: SpacetimePoint, z1: SpacetimePoint,
                      settings: SolverSettings = DEFAULT_SETTINGS) -> MorseReport:
    """Truncated Morse coefficients of the spacetime and the fiber with the Morse relations."""
    q_max = settings.q_max
    if settings.L_max is not None:
        L_max = settings.L_max
    elif math.isfinite(F.diameter):
        L_max = (q_max + 2) * F.diameter
    else:
        L_max = default_L_max(w, F, z0, z1, settings)
    run = settings.with_overrides(L_max=L_max)

    counts = [0] * (q_max + 2)
    specs = solve_connection(w, F, z0, z1, run)
    for spec in specs:
        try:
            index = conjugate_points(w, F, spec, run).morse_index
        except PreconditionError as e:
            raise PreconditionError(f"{e} (z0 and z1 are conjugate along a connecting geodesic)")
        if index <= q_max + 1:
            counts[index] += 1

    fiber = [0] * (q_max + 1)
    for g in F.geodesic_lengths(z0.x, z1.x, L_max):
        index = F.morse_index(g)
        if index <= q_max:
            fiber[index] += 1
    betti = F.path_space_betti(q_max, z0.x, z1.x, L_max)

    quotient = []
    previous = 0
    for q in range(q_max + 1):
        previous = fiber[q] - betti[q] - previous
        quotient.append(previous)

    spacetime = counts[:q_max + 1]
    upper = {q: fiber[q] <= counts[q] + counts[q + 1] for q in range(q_max + 1)}
    implied = {0: (counts[0] == 0) or fiber[0] > 0}
    for q in range(1, q_max + 1):
        implied[q] = counts[q] == 0 or fiber[q - 1] + fiber[q] > 0
    report = MorseReport(spacetime=spacetime, fiber=fiber, betti=betti, quotient=quotient,
                         hypotheses_verified=_morse_hypotheses(w, F, settings),
                         inequalities={"upper_bound": upper, "nonvanishing": implied},
                         specs=len(specs), L_max=L_max)
    if not report.quotient_nonnegative:
        logger.warning(f"negative quotient coefficients {quotient}: truncation at L_max = {L_max:.6g} is too short")
    if not all(upper.values()) or not all(implied.values()):
        logger.warning("Morse inequalities fail on the truncated range")
    return report
