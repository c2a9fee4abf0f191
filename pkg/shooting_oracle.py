#!/usr/bin/env python3
"""
Initial-value oracle for the base part of warped-product geodesics.

The base coordinate obeys tau'' = (c/2) P'(tau) with P = 1/f^2 and the
fiber arclength grows as r' = sqrt(c) P(tau), so that
D = -(tau')^2 + c P(tau) is conserved. The oracle integrates this system
directly, without any of the quadrature machinery, and is used to confirm
or refute the connections found by the K-scan solver.

Features:
- Integration in the affine parameter with escape, stall and step-collapse reports
- Integration in the fiber arclength, sampled at several lengths at once
- Sweeps over K (optionally in a process pool) with hit detection
- Matching of sweep hits against solver output
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from bounce_integrals import decode_K
from grw_errors import DomainError
from solver_settings import DEFAULT_SETTINGS, SolverSettings
from warp_function import WarpFunction

logger = logging.getLogger(__name__)

IVP_TOL = 1e-12
ESCAPE_LEVEL = 1e-16
STALL_TOL = 1e-12


@dataclass
class IVPCurve:
    t: np.ndarray
    tau: np.ndarray
    v: np.ndarray
    r: np.ndarray
    c: float
    D: float
    status: str
    drift: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "status": self.status,
            "D": self.D,
            "c": self.c,
            "t_end": float(self.t[-1]),
            "tau_end": float(self.tau[-1]),
            "r_end": float(self.r[-1]),
            "max_tau": float(self.tau.max()),
            "min_tau": float(self.tau.min()),
            "drift": self.drift,
        }


@dataclass(frozen=True)
class ArclengthState:
    L: float
    tau: float
    v: float
    bounces: int
    status: str


@dataclass(frozen=True)
class SweepHit:
    K: float
    L: float
    tau: float
    residual: float
    bounces: int

    def to_row(self) -> List:
        return [self.K, self.L, self.tau, self.residual, self.bounces]


@dataclass
class SweepReport:
    tau0: float
    tau1: float
    tol: float
    samples: List[SweepHit] = field(default_factory=list)

    @property
    def hits(self) -> List[SweepHit]:
        return [s for s in self.samples if s.residual < self.tol]

    def min_residual(self) -> Dict[float, float]:
        out: Dict[float, float] = {}
        for s in self.samples:
            out[s.L] = min(out.get(s.L, math.inf), s.residual)
        return out

    def rows(self) -> List[List]:
        return [s.to_row() for s in self.samples]

    def to_dict(self) -> Dict:
        best = self.min_residual()
        return {
            "tau0": self.tau0,
            "tau1": self.tau1,
            "tol": self.tol,
            "samples": len(self.samples),
            "hits": [dict(zip(("K", "L", "tau", "residual", "bounces"), h.to_row())) for h in self.hits],
            "min_residual": [[L, "inf" if math.isinf(v) else v] for L, v in sorted(best.items())],
        }


def _level_pair(w: WarpFunction, tau: float) -> Tuple[float, float]:
    with np.errstate(all='ignore'):
        p, dp, _ = w.level_derivs(tau)
    return float(p), float(dp)


def _escape_events(w: WarpFunction, p0: float, position: int = 0):
    """Terminal events: reaching a finite end, or 1/f^2 collapsing towards zero."""
    events = []
    for e, sign in ((w.b, 1.0), (w.a, -1.0)):
        if math.isfinite(e):
            margin = 1e-10 * max(1.0, abs(e))
            event = (lambda t, y, e=e, sign=sign, margin=margin: sign * (e - y[position]) - margin)
            event.terminal = True
            event.direction = -1
            events.append(event)
    floor = ESCAPE_LEVEL * p0

    def vanishing(t, y):
        return _level_pair(w, y[position])[0] - floor

    vanishing.terminal = True
    vanishing.direction = -1
    events.append(vanishing)
    return events


def integrate_ivp(w: WarpFunction, tau0: float, v0: float, c: float = 1.0,
                  t_span: Tuple[float, float] = (0.0, 1.0), samples: int = 400,
                  settings: SolverSettings = DEFAULT_SETTINGS) -> IVPCurve:
    """Integrate (tau, tau', r) in the affine parameter from tau0 with tau'(0) = v0."""
    w.check_point(tau0)
    if c < 0:
        raise DomainError(f"c must be non-negative, got {c}")
    t0, t1 = (float(v) for v in t_span)
    p0, _ = _level_pair(w, tau0)
    D = c * p0 - v0 * v0
    t_eval = np.linspace(t0, t1, samples)

    if c == 0.0:
        tau = tau0 + v0 * (t_eval - t0)
        inside = (tau > w.a) & (tau < w.b)
        status = "complete" if np.all(inside) else "escape"
        keep = np.cumprod(inside).astype(bool)
        return IVPCurve(t_eval[keep], tau[keep], np.full(keep.sum(), v0), np.zeros(keep.sum()),
                        c, D, status)

    root_c = math.sqrt(c)

    def rhs(t, y):
        p, dp = _level_pair(w, y[0])
        return [y[1], 0.5 * c * dp, root_c * p]

    sol = solve_ivp(rhs, (t0, t1), [tau0, v0, 0.0], method='DOP853', t_eval=t_eval,
                    events=_escape_events(w, p0), rtol=IVP_TOL, atol=IVP_TOL)
    status = "complete"
    if sol.status == -1:
        status = "step collapse"
        logger.warning(f"IVP step collapse at t = {sol.t[-1] if sol.t.size else t0}: {sol.message}")
    elif sol.status == 1:
        status = "escape"
    t, (tau, v, r) = sol.t, sol.y
    if t.size == 0:
        t, tau, v, r = (np.array([x]) for x in (t0, tau0, v0, 0.0))
    p_end, dp_end = _level_pair(w, float(tau[-1]))
    if status == "complete" and abs(v[-1]) < STALL_TOL and abs(dp_end) < STALL_TOL * max(p_end, 1e-300):
        status = "stalled"
        logger.warning(f"IVP stalled at tau = {tau[-1]:.12g}")
    with np.errstate(all='ignore'):
        energy = c * np.asarray(w.level(tau), dtype=float) - v * v
    drift = float(np.nanmax(np.abs(energy - D))) if energy.size else 0.0
    return IVPCurve(t, tau, v, r, c, D, status, drift)


def integrate_to_arclength(w: WarpFunction, tau0: float, v0: float, c: float,
                           lengths: Sequence[float], rtol: float = IVP_TOL) -> List[ArclengthState]:
    """(tau, tau', bounces) at each fiber arclength in ``lengths``, using r as the parameter."""
    w.check_point(tau0)
    if not c > 0:
        raise DomainError(f"integration in the fiber arclength needs c > 0, got {c}")
    targets = sorted(float(L) for L in lengths)
    if not targets:
        return []
    p0, _ = _level_pair(w, tau0)
    root_c = math.sqrt(c)

    def rhs(r, y):
        p, dp = _level_pair(w, y[0])
        return [y[1] / (root_c * p), 0.5 * c * dp / (root_c * p)]

    def turning(r, y):
        return y[1]

    events = _escape_events(w, p0) + [turning]
    sol = solve_ivp(rhs, (0.0, targets[-1]), [tau0, v0], method='DOP853', dense_output=True,
                    events=events, rtol=rtol, atol=IVP_TOL)
    turns = np.sort(sol.t_events[-1]) if sol.t_events else np.array([])
    # the start of a stationary launch is not a bounce
    turns = turns[turns > 1e-12 * max(1.0, targets[-1])]
    end_r = float(sol.t[-1])
    status = {0: "reached", 1: "escape", -1: "step collapse"}.get(sol.status, "step collapse")
    if sol.status == -1:
        logger.warning(f"arclength IVP failed at r = {end_r:.6g}: {sol.message}")
    out = []
    for L in targets:
        if L <= end_r * (1.0 + 1e-12) and sol.sol is not None:
            tau, v = (float(x) for x in sol.sol(min(L, end_r)))
            out.append(ArclengthState(L, tau, v, int(np.count_nonzero(turns < L)), "reached"))
        else:
            out.append(ArclengthState(L, math.nan, math.nan, int(turns.size), status))
    return out


def _sweep_chunk(args) -> List[SweepHit]:
    """Integrate one block of K values (module level so a process pool can pickle it)."""
    w, tau0, tau1, K_values, lengths, rtol = args
    out = []
    for K in K_values:
        D, eps = decode_K(w, tau0, float(K))
        v0 = eps * math.sqrt(abs(K))
        states = integrate_to_arclength(w, tau0, v0, 1.0, lengths, rtol=rtol)
        for s in states:
            residual = abs(s.tau - tau1) if math.isfinite(s.tau) else math.inf
            out.append(SweepHit(float(K), s.L, s.tau, residual, s.bounces))
    return out


def sweep_oracle(w: WarpFunction, tau0: float, tau1: float, K_values: Sequence[float],
                 lengths: Sequence[float], tol: float = 1e-6, workers: int = 1,
                 rtol: float = 1e-9) -> SweepReport:
    """Shoot every K to every fiber length and record the base point reached."""
    w.check_point(tau0)
    w.check_point(tau1)
    K_values = np.sort(np.asarray(K_values, dtype=float))
    lengths = sorted(float(L) for L in lengths if L > 0)
    report = SweepReport(tau0=tau0, tau1=tau1, tol=tol)
    if not lengths or K_values.size == 0:
        return report
    if workers > 1:
        chunks = np.array_split(K_values, workers * 4)
        jobs = [(w, tau0, tau1, chunk, lengths, rtol) for chunk in chunks if chunk.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for block in pool.map(_sweep_chunk, jobs):
                report.samples.extend(block)
    else:
        report.samples = _sweep_chunk((w, tau0, tau1, K_values, lengths, rtol))
    report.samples.sort(key=lambda s: (s.L, s.K))
    logger.info(f"Sweep of {K_values.size} K values x {len(lengths)} lengths: {len(report.hits)} hits")
    return report


def match_specs(report: SweepReport, spec_K: Dict[float, List[float]], n_max: int) -> Dict:
    """
    Every run of consecutive hits (per length, bounces <= n_max) must
    bracket one of the solver's K values for that length.
    """
    grid = sorted({s.K for s in report.samples})
    index = {K: j for j, K in enumerate(grid)}
    runs: List[Tuple[float, List[SweepHit]]] = []
    for L in sorted({s.L for s in report.samples}):
        hits = [h for h in report.hits if h.L == L and h.bounces <= n_max]
        current: List[SweepHit] = []
        for h in hits:
            if current and index[h.K] != index[current[-1].K] + 1:
                runs.append((L, current))
                current = []
            current.append(h)
        if current:
            runs.append((L, current))
    unmatched = []
    for L, run in runs:
        lo, hi = index[run[0].K], index[run[-1].K]
        K_lo = grid[max(lo - 1, 0)]
        K_hi = grid[min(hi + 1, len(grid) - 1)]
        known = [K for key, values in spec_K.items() if abs(key - L) <= 1e-9 * max(1.0, L) for K in values]
        if not any(K_lo <= K <= K_hi for K in known):
            unmatched.append({"L": L, "K_range": [run[0].K, run[-1].K]})
    return {"runs": len(runs), "unmatched": unmatched, "equivalent": not unmatched}


def confirm_spec(w: WarpFunction, tau0: float, tau1: float, D: float, epsilon: int, L: float,
                 c: float = 1.0, rtol: float = IVP_TOL) -> float:
    """Base-point residual of a connection re-integrated as an initial-value problem."""
    if c == 0.0:
        return 0.0
    p0, _ = _level_pair(w, tau0)
    v0 = epsilon * math.sqrt(max(c * p0 - D, 0.0))
    state = integrate_to_arclength(w, tau0, v0, c, [L], rtol=rtol)[0]
    return abs(state.tau - tau1) if math.isfinite(state.tau) else math.inf


def default_sweep_grid(w: WarpFunction, tau0: float, points: int,
                       settings: SolverSettings = DEFAULT_SETTINGS,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Uniform K grid over the bounce range and a log grid beyond it, optionally jittered."""
    p0 = float(w.level(tau0))
    m = min(w.infima(tau0, settings)[0], p0)
    span = max(p0 - m, 1e-3 * p0)
    half = max(points // 2, 2)
    inner = np.linspace(-span, span, half)
    outer = np.geomspace(span, settings.K_max * p0, max(half // 2, 2))
    grid = np.concatenate([inner, outer, -outer])
    if rng is not None:
        grid = grid + rng.uniform(-0.25, 0.25, grid.size) * span / half
    return np.unique(grid)
