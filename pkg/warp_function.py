#!/usr/bin/env python3
"""
Warping functions f > 0 on an open interval I = (a, b).

Every family exposes f, f', f'' exactly (closed form, or spline for
tabulated data) together with the level function P = 1/f^2 and its
first two derivatives. All connectivity conditions are stated for P,
so the relative minima, liminf values m_a, m_b and infima m, m_r, m_l
reported here are always levels of 1/f^2.

Features:
- Closed-form families: constant, cosh, polynomial, power of (1 + tau^2),
  trigonometric polynomial, polynomial level function, oscillating end,
  log-periodic staircase (with the shifted and extended variant)
- Tabulated family backed by a natural cubic spline (two-column CSV)
- Extreme profiles (limits of f, f', liminf of 1/f^2, strict relative minimum)
- Infima of 1/f^2 over I and over the two sides of a base point
- Strips (a', b') inside I for the curvature criterion
- Level-form warps from a polynomial or from user callables
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from grw_errors import ConfigError, DomainError
from solver_settings import DEFAULT_SETTINGS, SolverSettings, format_extended, parse_extended

logger = logging.getLogger(__name__)

# log-periodic staircase: one flat step per halving of the distance to b
STAIRCASE_KAPPA = 2.0 * math.pi / math.log(2.0)

ENDS = ("a", "b")


@dataclass(frozen=True)
class EndLimits:
    lim_f: Optional[float]
    lim_fprime: Optional[float]
    m_end: float
    is_relative_min: Optional[bool]
    fpp_bounded: Optional[bool] = None


@dataclass(frozen=True)
class ExtremeProfile:
    """Behaviour of f and 1/f^2 at one extreme of the interval"""

    end: str
    m_end: float
    lim_f: Optional[float]
    lim_fprime: Optional[float]
    is_relative_min: bool
    fpp_bounded: Optional[bool]
    method: str
    converged: bool = True

    def to_dict(self) -> Dict:
        return {
            "end": self.end,
            "m_end": format_extended(self.m_end),
            "lim_f": "none" if self.lim_f is None else format_extended(self.lim_f),
            "lim_fprime": "none" if self.lim_fprime is None else format_extended(self.lim_fprime),
            "is_relative_min": self.is_relative_min,
            "fpp_bounded": self.fpp_bounded,
            "method": self.method,
            "converged": self.converged,
        }


def _map_unit(s: np.ndarray, a: float, b: float) -> np.ndarray:
    """Map s in (-1, 1) onto (a, b), compactifying infinite ends."""
    if math.isfinite(a) and math.isfinite(b):
        return 0.5 * (a + b) + 0.5 * (b - a) * s
    if math.isfinite(a):
        return a + (1.0 + s) / (1.0 - s)
    if math.isfinite(b):
        return b - (1.0 - s) / (1.0 + s)
    return s / (1.0 - s * s)


class WarpFunction(ABC):
    """Positive warping function on (a, b) with exact derivatives"""

    family = "abstract"

    def __init__(self, a: float = -math.inf, b: float = math.inf, params: Optional[Dict] = None):
        a, b = float(a), float(b)
        if not a < b or a == math.inf or b == -math.inf:
            raise DomainError(f"Invalid interval ({a}, {b})")
        self.a = a
        self.b = b
        self.params = dict(params or {})

    # -- family hooks --------------------------------------------------

    @abstractmethod
    def _derivs(self, tau):
        """Return (f, f', f'') at tau without domain checks."""

    def _level_derivs(self, tau):
        f, fp, fpp = self._derivs(tau)
        with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
            p = 1.0 / (f * f)
            dp = -2.0 * fp / (f * f * f)
            ddp = 6.0 * fp * fp / (f ** 4) - 2.0 * fpp / (f * f * f)
        return p, dp, ddp

    def _extends_to(self, end: str) -> bool:
        """True when the closed-form expression stays valid at a finite end."""
        return False

    def _closed_form_limits(self, end: str) -> Optional[EndLimits]:
        return None

    def _level_power(self, end: str) -> Optional[float]:
        """q with 1/f^2 ~ C |tau|^q at an infinite end; -inf for exponential decay."""
        return None

    def tail_exponent(self, end: str) -> Optional[float]:
        """Power law of 1/f^2 at an infinite extreme when the family knows it, else None."""
        if math.isfinite(self.end_value(end)):
            return None
        return self._level_power(end)

    # -- evaluation ----------------------------------------------------

    @property
    def interval(self) -> Tuple[float, float]:
        return (self.a, self.b)

    def end_value(self, end: str) -> float:
        if end not in ENDS:
            raise DomainError(f"Unknown extreme: {end!r} (expected 'a' or 'b')")
        return self.a if end == "a" else self.b

    def contains(self, tau: float) -> bool:
        return self.a < tau < self.b

    def in_closure(self, tau: float) -> bool:
        """Interior points plus finite ends where the formula extends."""
        if self.contains(tau):
            return True
        return any(tau == self.end_value(e) and math.isfinite(tau) and self._extends_to(e) for e in ENDS)

    def check_point(self, tau: float, allow_ends: bool = False):
        ok = self.in_closure(tau) if allow_ends else self.contains(tau)
        if not ok:
            raise DomainError(f"tau = {tau} is outside the interval ({self.a}, {self.b})")

    def eval(self, tau: float) -> Tuple[float, float, float]:
        """Return (f, f', f'') at an interior point."""
        self.check_point(tau)
        f, fp, fpp = (float(v) for v in self._derivs(float(tau)))
        if not (f > 0 and math.isfinite(f)):
            raise DomainError(f"Warping function is not positive at tau = {tau} (f = {f})")
        return f, fp, fpp

    def value(self, tau):
        return self._derivs(tau)[0]

    def level(self, tau):
        """1/f^2, vectorized."""
        return self._level_derivs(tau)[0]

    def level_prime(self, tau):
        return self._level_derivs(tau)[1]

    def level_second(self, tau):
        return self._level_derivs(tau)[2]

    def level_derivs(self, tau):
        return self._level_derivs(tau)

    def inverse_f(self, tau):
        with np.errstate(divide='ignore', over='ignore'):
            return 1.0 / self._derivs(tau)[0]

    # -- sampling ------------------------------------------------------

    def sample_points(self, n: int) -> np.ndarray:
        """n interior points, compactified over infinite ends."""
        s = np.linspace(-1.0, 1.0, n + 2)[1:-1]
        return _map_unit(s, self.a, self.b)

    def chebyshev_points(self, n: int) -> np.ndarray:
        k = np.arange(n)
        s = np.cos(math.pi * (k + 0.5) / n)
        return np.sort(_map_unit(s, self.a, self.b))

    def window_eps(self, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
        if math.isfinite(self.a) and math.isfinite(self.b):
            eps = settings.window_eps or 1e-2 * (self.b - self.a)
            return min(eps, 0.5 * (self.b - self.a))
        finite = self.a if math.isfinite(self.a) else self.b
        scale = 1.0 if not math.isfinite(finite) else max(1.0, abs(finite))
        return settings.window_eps or 1e-2 * scale

    def window_point(self, end: str, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
        """Window point c next to an extreme: b - eps, or M for an infinite end."""
        M = settings.window_M
        if end == "b":
            if math.isfinite(self.b):
                return self.b - self.window_eps(settings)
            return max(M, self.a + max(1.0, abs(self.a))) if math.isfinite(self.a) else M
        if end == "a":
            if math.isfinite(self.a):
                return self.a + self.window_eps(settings)
            return min(-M, self.b - max(1.0, abs(self.b))) if math.isfinite(self.b) else -M
        raise DomainError(f"Unknown extreme: {end!r}")

    def approach_points(self, end: str, shells: int = 40, per_shell: int = 8,
                        start: Optional[float] = None,
                        settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
        """Geometric sequence of points from the window point towards an extreme."""
        c = self.window_point(end, settings) if start is None else start
        e = self.end_value(end)
        steps = np.arange(shells * per_shell) / per_shell
        if math.isfinite(e):
            dist = abs(e - c) * np.power(2.0, -steps)
            return e - dist if end == "b" else e + dist
        scale = max(1.0, abs(c))
        offset = scale * (np.power(2.0, steps) - 1.0)
        return c + offset if end == "b" else c - offset

    # -- extremes ------------------------------------------------------

    def end_limits(self, end: str) -> Optional[EndLimits]:
        closed = self._closed_form_limits(end)
        if closed is not None:
            return closed
        e = self.end_value(end)
        if not (math.isfinite(e) and self._extends_to(end)):
            return None
        f, fp, _ = (float(v) for v in self._derivs(e))
        p, dp, ddp = (float(v) for v in self._level_derivs(e))
        # inward sign of the level slope decides the relative minimum at an extendible end
        inward = -dp if end == "b" else dp
        if abs(inward) > 1e-14 * max(1.0, abs(p)):
            rel_min = inward > 0
        elif abs(ddp) > 1e-14 * max(1.0, abs(p)):
            rel_min = ddp > 0
        else:
            rel_min = None
        return EndLimits(lim_f=f, lim_fprime=fp, m_end=p, is_relative_min=rel_min, fpp_bounded=True)

    def extreme_profile(self, end: str, settings: SolverSettings = DEFAULT_SETTINGS) -> ExtremeProfile:
        """Limits of f, f' and the liminf of 1/f^2 at an extreme."""
        limits = self.end_limits(end)
        if limits is not None and limits.is_relative_min is not None:
            return ExtremeProfile(end=end, m_end=limits.m_end, lim_f=limits.lim_f,
                                  lim_fprime=limits.lim_fprime,
                                  is_relative_min=bool(limits.is_relative_min),
                                  fpp_bounded=limits.fpp_bounded, method="closed_form")
        profile = self._sampled_profile(end, settings)
        if limits is not None:
            profile = ExtremeProfile(end=end, m_end=limits.m_end, lim_f=limits.lim_f,
                                     lim_fprime=limits.lim_fprime,
                                     is_relative_min=profile.is_relative_min,
                                     fpp_bounded=limits.fpp_bounded, method="mixed",
                                     converged=profile.converged)
        return profile

    def _sampled_profile(self, end: str, settings: SolverSettings) -> ExtremeProfile:
        shells, per_shell = settings.k_max, 8
        points = self.approach_points(end, shells=shells, per_shell=per_shell, settings=settings)
        with np.errstate(all='ignore'):
            f, fp, fpp = self._derivs(points)
            p = self._level_derivs(points)[0]
        p = np.where(np.isnan(p), np.inf, p).reshape(shells, per_shell)
        shell_min = p.min(axis=1)
        tail = 4
        m_end = float(shell_min[-tail:].min())
        previous = float(shell_min[-2 * tail:-tail].min())
        converged = abs(m_end - previous) <= 1e-6 * max(1.0, abs(m_end))
        if not converged:
            logger.warning(f"liminf of 1/f^2 at {end} did not settle: {previous:.6g} vs {m_end:.6g}")
        rel_min = bool(np.all(p[:-tail] > m_end))

        def _limit(values: np.ndarray) -> Optional[float]:
            values = values.reshape(shells, per_shell)[-tail:].ravel()
            if np.all(np.isinf(values)) and np.all(np.sign(values) == np.sign(values[0])):
                return float(values[0])
            finite = values[np.isfinite(values)]
            if finite.size < values.size:
                return None
            spread = finite.max() - finite.min()
            centre = float(np.mean(finite))
            if spread <= 1e-6 * max(1.0, abs(centre)):
                return centre
            if finite.min() > 1e8 and np.all(np.diff(finite) > 0):
                return math.inf
            if finite.max() < -1e8 and np.all(np.diff(finite) < 0):
                return -math.inf
            return None

        lim_f = _limit(np.asarray(f, dtype=float))
        lim_fprime = _limit(np.asarray(fp, dtype=float))
        fpp_abs = np.abs(np.asarray(fpp, dtype=float)).reshape(shells, per_shell)
        fpp_bounded = bool(np.all(np.isfinite(fpp_abs)) and
                           fpp_abs[-tail:].max() <= 10.0 * max(1.0, fpp_abs[:tail].max()))
        return ExtremeProfile(end=end, m_end=m_end, lim_f=lim_f, lim_fprime=lim_fprime,
                              is_relative_min=rel_min, fpp_bounded=fpp_bounded,
                              method="sampled", converged=converged)

    # -- infima --------------------------------------------------------

    def _grid_minima(self, grid: np.ndarray) -> List[Tuple[float, float]]:
        """Local minima of 1/f^2 on a sorted grid, refined between the neighbouring nodes."""
        with np.errstate(all='ignore'):
            p = self.level(grid)
        found = []
        for i in range(1, len(grid) - 1):
            if p[i] <= p[i - 1] and p[i] <= p[i + 1]:
                res = minimize_scalar(lambda t: float(self.level(t)), bounds=(grid[i - 1], grid[i + 1]),
                                      method='bounded', options={'xatol': 1e-12})
                found.append((float(res.x), float(res.fun)))
        return found

    def _local_minima(self, lo: float, hi: float, n: int = 4001) -> List[Tuple[float, float]]:
        """Refined local minima of 1/f^2 inside [lo, hi] (finite bounds)."""
        return self._grid_minima(np.linspace(lo, hi, n))

    def _min_over(self, lo: float, hi: float) -> float:
        """min of 1/f^2 over [lo, hi] where the bounds may be infinite."""
        if math.isfinite(lo) and math.isfinite(hi):
            pieces = [(lo, hi)]
        else:
            sub = WarpSampler(lo, hi)
            pts = sub.points(4001)
            pieces = [(pts[0], pts[-1])]
            with np.errstate(all='ignore'):
                p = self.level(pts)
            idx = int(np.nanargmin(p))
            if 0 < idx < len(pts) - 1:
                pieces.append((pts[idx - 1], pts[idx + 1]))
        best = math.inf
        for x0, x1 in pieces:
            with np.errstate(all='ignore'):
                best = min(best, float(np.nanmin(self.level(np.array([x0, x1])))))
            for _, value in self._local_minima(x0, x1):
                best = min(best, value)
        return best

    @cached_property
    def global_infimum(self) -> float:
        """m = inf of 1/f^2 over (a, b), including the end liminfs."""
        ends = [self.extreme_profile(e).m_end for e in ENDS]
        return min([self.interior_minimum] + ends)

    @cached_property
    def interior_minimum(self) -> float:
        """Smallest sampled value of 1/f^2 attained inside (a, b)."""
        pts = self.sample_points(4001)
        with np.errstate(all='ignore'):
            best = float(np.nanmin(self.level(pts)))
        return min([best] + [value for _, value in self._grid_minima(pts)])

    def infima(self, tau0: float, settings: SolverSettings = DEFAULT_SETTINGS) -> Tuple[float, float, float]:
        """(m, m_r, m_l): infima of 1/f^2 over (a, b), [tau0, b) and (a, tau0]."""
        self.check_point(tau0, allow_ends=True)
        p0 = float(self.level(tau0))
        m_b = self.extreme_profile("b", settings).m_end
        m_a = self.extreme_profile("a", settings).m_end
        m_r = min(p0, m_b, self._min_over(tau0, self.b))
        m_l = min(p0, m_a, self._min_over(self.a, tau0))
        m = min(self.global_infimum, m_r, m_l)
        return m, m_r, m_l

    # -- construction helpers ------------------------------------------

    def _validate_positive(self, n: int = 513):
        pts = self.sample_points(n)
        with np.errstate(all='ignore'):
            f = np.asarray(self.value(pts), dtype=float)
        bad = ~(np.isfinite(f) & (f > 0))
        if np.any(bad):
            where = float(pts[np.argmax(bad)])
            raise DomainError(f"{self.family} warp is not positive on the interval (tau = {where:.6g})")

    def restrict(self, a2: float, b2: float) -> "WarpFunction":
        """Strip (a2, b2) inside the interval with the restricted warp."""
        return RestrictedWarp(self, a2, b2)

    def describe(self) -> Dict:
        return {
            "family": self.family,
            "interval": [format_extended(self.a), format_extended(self.b)],
            "params": {k: (list(v) if isinstance(v, (tuple, np.ndarray)) else v) for k, v in self.params.items()},
        }

    def __repr__(self):
        return f"{type(self).__name__}(interval=({self.a}, {self.b}), params={self.params})"


class WarpSampler:
    """Compactified sampling of an arbitrary sub-interval"""

    def __init__(self, lo: float, hi: float):
        self.lo, self.hi = lo, hi

    def points(self, n: int) -> np.ndarray:
        s = np.linspace(-1.0, 1.0, n + 2)[1:-1]
        return _map_unit(s, self.lo, self.hi)


class LevelFormWarp(WarpFunction):
    """Warps specified through their level function P = 1/f^2"""

    @abstractmethod
    def _level_form(self, tau):
        """Return (P, P', P'')."""

    def _level_derivs(self, tau):
        return self._level_form(tau)

    def _derivs(self, tau):
        p, dp, ddp = self._level_form(tau)
        with np.errstate(all='ignore'):
            f = np.power(p, -0.5)
            fp = -0.5 * np.power(p, -1.5) * dp
            fpp = 0.75 * np.power(p, -2.5) * dp * dp - 0.5 * np.power(p, -1.5) * ddp
        return f, fp, fpp


class ConstantWarp(WarpFunction):
    family = "constant"

    def __init__(self, value: float = 1.0, a: float = -math.inf, b: float = math.inf):
        if not value > 0:
            raise DomainError(f"Constant warp must be positive, got {value}")
        super().__init__(a, b, {"value": float(value)})
        self.c0 = float(value)

    def _derivs(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.full_like(tau, self.c0), np.zeros_like(tau), np.zeros_like(tau)

    def _extends_to(self, end):
        return True

    def _closed_form_limits(self, end):
        return EndLimits(lim_f=self.c0, lim_fprime=0.0, m_end=1.0 / self.c0 ** 2,
                         is_relative_min=False, fpp_bounded=True)

    def _level_power(self, end):
        return 0.0


class CoshWarp(WarpFunction):
    family = "cosh"

    def __init__(self, amplitude: float = 1.0, rate: float = 1.0, center: float = 0.0,
                 a: float = -math.inf, b: float = math.inf):
        if not (amplitude > 0 and rate > 0):
            raise DomainError("cosh warp needs positive amplitude and rate")
        super().__init__(a, b, {"amplitude": amplitude, "rate": rate, "center": center})
        self.A, self.k, self.tc = float(amplitude), float(rate), float(center)

    def _derivs(self, tau):
        x = self.k * (np.asarray(tau, dtype=float) - self.tc)
        with np.errstate(over='ignore'):
            ch, sh = np.cosh(x), np.sinh(x)
        return self.A * ch, self.A * self.k * sh, self.A * self.k * self.k * ch

    def _level_derivs(self, tau):
        x = self.k * (np.asarray(tau, dtype=float) - self.tc)
        # sech/tanh form stays finite where cosh overflows
        sech = 1.0 / np.cosh(np.clip(x, -700.0, 700.0))
        sech = np.where(np.abs(x) > 700.0, 0.0, sech)
        th = np.tanh(x)
        p = sech * sech / self.A ** 2
        dp = -2.0 * self.k * p * th
        ddp = self.k ** 2 * p * (6.0 * th * th - 2.0)
        return p, dp, ddp

    def _extends_to(self, end):
        return True

    def _closed_form_limits(self, end):
        e = self.end_value(end)
        if math.isfinite(e):
            return None
        sign = 1.0 if end == "b" else -1.0
        return EndLimits(lim_f=math.inf, lim_fprime=sign * math.inf, m_end=0.0,
                         is_relative_min=True, fpp_bounded=False)

    def _level_power(self, end):
        return -math.inf


class PolynomialWarp(WarpFunction):
    family = "polynomial"

    def __init__(self, coeffs: List[float], a: float = -math.inf, b: float = math.inf):
        if len(coeffs) == 0:
            raise DomainError("polynomial warp needs at least one coefficient")
        super().__init__(a, b, {"coeffs": [float(c) for c in coeffs]})
        self.poly = np.polynomial.Polynomial([float(c) for c in coeffs]).trim()
        self.d1 = self.poly.deriv(1)
        self.d2 = self.poly.deriv(2)
        self._validate_positive()

    def _derivs(self, tau):
        tau = np.asarray(tau, dtype=float)
        with np.errstate(over='ignore', invalid='ignore'):
            return self.poly(tau), self.d1(tau), self.d2(tau)

    def _extends_to(self, end):
        return True

    def _closed_form_limits(self, end):
        e = self.end_value(end)
        if math.isfinite(e):
            return None
        degree = self.poly.degree()
        if degree == 0:
            c0 = float(self.poly.coef[0])
            return EndLimits(c0, 0.0, 1.0 / c0 ** 2, False, True)
        far = 1e8 if end == "b" else -1e8
        if degree == 1:
            lim_fp = float(self.poly.coef[1])
        else:
            lim_fp = math.copysign(math.inf, float(self.d1(far)))
        return EndLimits(lim_f=math.inf, lim_fprime=lim_fp, m_end=0.0,
                         is_relative_min=True, fpp_bounded=degree <= 2)

    def _level_power(self, end):
        return -2.0 * self.poly.degree()


class PowerQuadraticWarp(WarpFunction):
    """f = offset + amplitude * (1 + tau^2)^power"""

    family = "power_quadratic"

    def __init__(self, power: float = 0.25, amplitude: float = 1.0, offset: float = 0.0,
                 a: float = -math.inf, b: float = math.inf):
        super().__init__(a, b, {"power": power, "amplitude": amplitude, "offset": offset})
        self.p, self.A, self.c0 = float(power), float(amplitude), float(offset)
        self._validate_positive()

    def _derivs(self, tau):
        t = np.asarray(tau, dtype=float)
        q = 1.0 + t * t
        p = self.p
        with np.errstate(over='ignore', invalid='ignore'):
            f = self.c0 + self.A * np.power(q, p)
            fp = self.A * p * 2.0 * t * np.power(q, p - 1.0)
            fpp = self.A * p * (2.0 * np.power(q, p - 1.0) + 4.0 * t * t * (p - 1.0) * np.power(q, p - 2.0))
        return f, fp, fpp

    def _extends_to(self, end):
        return True

    def _closed_form_limits(self, end):
        e = self.end_value(end)
        if math.isfinite(e):
            return None
        sign = 1.0 if end == "b" else -1.0
        p, A, c0 = self.p, self.A, self.c0
        if p == 0 or A == 0:
            value = c0 + A
            return EndLimits(value, 0.0, 1.0 / value ** 2, False, True)
        if p > 0:
            if 2 * p > 1:
                lim_fp = sign * math.copysign(math.inf, A)
            elif 2 * p == 1:
                lim_fp = sign * A
            else:
                lim_fp = 0.0
            return EndLimits(math.inf, lim_fp, 0.0, True, p <= 1)
        if c0 == 0:
            return EndLimits(0.0, 0.0, math.inf, False, True)
        # approaching the offset from above makes 1/f^2 approach m from below
        return EndLimits(c0, 0.0, 1.0 / c0 ** 2, A < 0, True)

    def _level_power(self, end):
        if self.p == 0 or self.A == 0 or (self.p < 0 and self.c0 != 0):
            return 0.0
        # f ~ A |tau|^(2p) once the offset is negligible or absent
        return -4.0 * self.p


class TrigPolynomialWarp(WarpFunction):
    """f = offset + sum_k cos_k cos(k w tau) + sin_k sin(k w tau)"""

    family = "trig_polynomial"

    def __init__(self, offset: float = 2.0, cos: Optional[List[float]] = None,
                 sin: Optional[List[float]] = None, omega: float = 1.0,
                 a: float = -math.inf, b: float = math.inf):
        cos, sin = list(cos or []), list(sin or [])
        n = max(len(cos), len(sin))
        cos += [0.0] * (n - len(cos))
        sin += [0.0] * (n - len(sin))
        super().__init__(a, b, {"offset": offset, "cos": cos, "sin": sin, "omega": omega})
        self.c0, self.omega = float(offset), float(omega)
        self.ca = np.array(cos, dtype=float)
        self.sa = np.array(sin, dtype=float)
        self.k = np.arange(1, n + 1, dtype=float) * self.omega
        self._validate_positive()

    def _derivs(self, tau):
        t = np.asarray(tau, dtype=float)
        phase = np.multiply.outer(t, self.k)
        c, s = np.cos(phase), np.sin(phase)
        f = self.c0 + c @ self.ca + s @ self.sa
        fp = (-s * self.k) @ self.ca + (c * self.k) @ self.sa
        fpp = (-c * self.k ** 2) @ self.ca + (-s * self.k ** 2) @ self.sa
        return f, fp, fpp

    def _extends_to(self, end):
        return True

    def _closed_form_limits(self, end):
        e = self.end_value(end)
        if math.isfinite(e):
            return None
        if not (np.any(self.ca) or np.any(self.sa)):
            return EndLimits(self.c0, 0.0, 1.0 / self.c0 ** 2, False, True)
        # periodic: the liminf is the minimum over one period and is attained infinitely often
        period = 2.0 * math.pi / self.omega
        grid = np.linspace(0.0, period, 4097)
        p = self.level(grid)
        i = int(np.argmin(p))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(lambda t: float(self.level(t)), bounds=(lo, hi), method='bounded',
                              options={'xatol': 1e-12})
        return EndLimits(None, None, min(float(res.fun), float(p[i])), False, True)

    def _level_power(self, end):
        return 0.0


class LevelPolynomialWarp(LevelFormWarp):
    """1/f^2 given as a polynomial (ascending coefficients)"""

    family = "level_polynomial"

    def __init__(self, coeffs: List[float], a: float = -math.inf, b: float = math.inf):
        super().__init__(a, b, {"coeffs": [float(c) for c in coeffs]})
        self.poly = np.polynomial.Polynomial([float(c) for c in coeffs]).trim()
        self.d1 = self.poly.deriv(1)
        self.d2 = self.poly.deriv(2)
        pts = self.sample_points(513)
        if np.any(self.poly(pts) <= 0):
            raise DomainError("level polynomial must stay positive on the interval")

    def _level_form(self, tau):
        t = np.asarray(tau, dtype=float)
        with np.errstate(over='ignore', invalid='ignore'):
            return self.poly(t), self.d1(t), self.d2(t)

    def _extends_to(self, end):
        return float(self.poly(self.end_value(end))) > 0

    def _closed_form_limits(self, end):
        e = self.end_value(end)
        if math.isfinite(e):
            if float(self.poly(e)) > 1e-14:
                return None
            sign = 1.0 if end == "b" else -1.0
            return EndLimits(math.inf, sign * math.inf, 0.0, True, False)
        if self.poly.degree() == 0:
            c = float(self.poly.coef[0])
            return EndLimits(c ** -0.5, 0.0, c, False, True)
        return EndLimits(0.0, 0.0, math.inf, False, True)

    def _level_power(self, end):
        return float(self.poly.degree())


class CallableLevelWarp(LevelFormWarp):
    """1/f^2 supplied as three vectorized callables P, P', P''"""

    family = "level_callable"

    def __init__(self, level: Callable, level_prime: Callable, level_second: Callable,
                 a: float = -math.inf, b: float = math.inf, extends: Tuple[bool, bool] = (False, False)):
        super().__init__(a, b, {"level": getattr(level, "__name__", "callable")})
        self._fns = (level, level_prime, level_second)
        self._extends = dict(zip(ENDS, extends))
        with np.errstate(all='ignore'):
            p = np.asarray(level(self.sample_points(513)), dtype=float)
        if not np.all(np.isfinite(p) & (p > 0)):
            raise DomainError("level function must be finite and positive on the interval")

    def _level_form(self, tau):
        t = np.asarray(tau, dtype=float)
        return tuple(np.asarray(fn(t), dtype=float) for fn in self._fns)

    def _extends_to(self, end):
        return self._extends[end]


def from_level(level: Callable, level_prime: Callable, level_second: Callable,
               a: float = -math.inf, b: float = math.inf, **kwargs) -> WarpFunction:
    """Warp given through its level function 1/f^2 and the first two derivatives."""
    return CallableLevelWarp(level, level_prime, level_second, a, b, **kwargs)


class EndOscillationWarp(WarpFunction):
    """f = offset + amplitude (b - tau)^power sin(omega / (b - tau)) on a bounded interval"""

    family = "end_oscillation"

    def __init__(self, offset: float = 1.0, amplitude: float = 0.1, power: float = 2.0,
                 omega: float = 1.0, a: float = 0.0, b: float = 1.0):
        if not (math.isfinite(a) and math.isfinite(b)):
            raise DomainError("end_oscillation warp needs a bounded interval")
        super().__init__(a, b, {"offset": offset, "amplitude": amplitude, "power": power, "omega": omega})
        self.c0, self.A, self.p, self.w = float(offset), float(amplitude), float(power), float(omega)
        self._validate_positive()

    def _derivs(self, tau):
        X = self.b - np.asarray(tau, dtype=float)
        p, w, A = self.p, self.w, self.A
        with np.errstate(all='ignore'):
            s, c = np.sin(w / X), np.cos(w / X)
            g = A * np.power(X, p) * s
            g_x = A * (p * np.power(X, p - 1) * s - w * np.power(X, p - 2) * c)
            g_xx = A * ((p * (p - 1) * np.power(X, p - 2) - w * w * np.power(X, p - 4)) * s
                        - w * (2 * p - 2) * np.power(X, p - 3) * c)
        return self.c0 + g, -g_x, g_xx

    def _extends_to(self, end):
        return end == "a"

    def _closed_form_limits(self, end):
        if end == "a":
            return None
        return EndLimits(lim_f=self.c0, lim_fprime=0.0 if self.p > 2 else None,
                         m_end=1.0 / self.c0 ** 2, is_relative_min=self.A == 0,
                         fpp_bounded=self.p >= 4)


class LogStaircaseWarp(LevelFormWarp):
    """
    Level function with log-periodic flat steps accumulating at b = 1.

    On (0, 1), with X = 1 - tau and k = 2 pi / ln 2,
    u = X - X (cos(k ln X) + k sin(k ln X)) / (1 + k^2) satisfies
    du/dtau = -(1 - cos(k ln X)) <= 0, so 1/f^2 = shift + u decreases to
    ``shift`` and is flat (to second order) at every X = 2^-n.
    With ``extended`` the level is continued to (-1/shift, 0] by
    (shift + u(0)) (1 - (-shift tau)^3), a C^2 join vanishing at -1/shift.
    """

    family = "log_staircase"

    def __init__(self, shift: float = 0.0, extended: bool = False):
        if shift < 0:
            raise DomainError("staircase shift must be non-negative")
        if extended and shift <= 0:
            raise DomainError("the extended staircase needs a positive shift")
        a = -1.0 / shift if extended else 0.0
        super().__init__(a, 1.0, {"shift": shift, "extended": extended})
        self.N = float(shift)
        self.extended = bool(extended)
        k = STAIRCASE_KAPPA
        self.u0 = k * k / (1.0 + k * k)

    def _steps(self, tau):
        X = 1.0 - tau
        k = STAIRCASE_KAPPA
        with np.errstate(all='ignore'):
            theta = k * np.log(X)
            c, s = np.cos(theta), np.sin(theta)
            u = X - X * (c + k * s) / (1.0 + k * k)
            du = -(1.0 - c)
            ddu = k * s / X
        return u, du, ddu

    def _level_form(self, tau):
        t = np.asarray(tau, dtype=float)
        u, du, ddu = self._steps(np.maximum(t, 0.0))
        p, dp, ddp = self.N + u, du, ddu
        if self.extended:
            top = self.N + self.u0
            y = -self.N * np.minimum(t, 0.0)
            p_left = top * (1.0 - y ** 3)
            dp_left = top * 3.0 * self.N * y ** 2
            ddp_left = -top * 6.0 * self.N ** 2 * y
            left = t <= 0
            p = np.where(left, p_left, p)
            dp = np.where(left, dp_left, dp)
            ddp = np.where(left, ddp_left, ddp)
        return p, dp, ddp

    def _extends_to(self, end):
        return end == "a" and not self.extended

    def _closed_form_limits(self, end):
        if end == "b":
            lim_f = self.N ** -0.5 if self.N > 0 else math.inf
            return EndLimits(lim_f, None, self.N, True, False)
        if self.extended:
            return EndLimits(math.inf, -math.inf, 0.0, True, False)
        return EndLimits(self.u0 ** -0.5, 0.0, self.u0, False, True)


class TabulatedWarp(WarpFunction):
    """Natural cubic spline through (tau, f) samples"""

    family = "tabulated"

    def __init__(self, taus: List[float], values: List[float], source: Optional[str] = None):
        taus = np.asarray(taus, dtype=float)
        values = np.asarray(values, dtype=float)
        if taus.ndim != 1 or taus.shape != values.shape or taus.size < 4:
            raise DomainError("tabulated warp needs at least four (tau, f) rows")
        if np.any(np.diff(taus) <= 0):
            raise DomainError("tabulated tau values must be strictly increasing")
        if np.any(values <= 0):
            raise DomainError("tabulated warp values must be positive")
        super().__init__(taus[0], taus[-1], {"rows": int(taus.size), "source": source})
        self.spline = CubicSpline(taus, values, bc_type='natural')
        self._validate_positive()

    @classmethod
    def from_csv(cls, path: str) -> "TabulatedWarp":
        data = np.loadtxt(path, delimiter=',', comments='#', ndmin=2)
        if data.shape[1] < 2:
            raise ConfigError(f"Tabulated warp file {path} needs two columns (tau, f)")
        logger.info(f"Loaded {data.shape[0]} warp samples from {path}")
        return cls(data[:, 0], data[:, 1], source=str(path))

    def _derivs(self, tau):
        t = np.asarray(tau, dtype=float)
        return self.spline(t), self.spline(t, 1), self.spline(t, 2)

    def _extends_to(self, end):
        return True


class RestrictedWarp(WarpFunction):
    """The parent warp on a strip (a', b') strictly inside its interval"""

    def __init__(self, parent: WarpFunction, a2: float, b2: float):
        if not (parent.a < a2 < b2 < parent.b):
            raise DomainError(f"Strip ({a2}, {b2}) is not inside ({parent.a}, {parent.b})")
        super().__init__(a2, b2, {"parent": parent.describe(), "strip": [a2, b2]})
        self.parent = parent
        self.family = f"{parent.family}_strip"

    def _derivs(self, tau):
        return self.parent._derivs(tau)

    def _level_derivs(self, tau):
        return self.parent._level_derivs(tau)

    def _extends_to(self, end):
        return True


WARP_FAMILIES = {
    "constant": ConstantWarp,
    "cosh": CoshWarp,
    "polynomial": PolynomialWarp,
    "power_quadratic": PowerQuadraticWarp,
    "trig_polynomial": TrigPolynomialWarp,
    "level_polynomial": LevelPolynomialWarp,
    "end_oscillation": EndOscillationWarp,
    "log_staircase": LogStaircaseWarp,
}


def make_warp(family: str, params: Optional[Dict] = None,
              interval: Optional[Tuple] = None) -> WarpFunction:
    """Build a warp of a named family; interval ends may be "inf"/"-inf"."""
    params = dict(params or {})
    if family == "tabulated":
        if "csv" in params:
            return TabulatedWarp.from_csv(params["csv"])
        return TabulatedWarp(params.get("taus", []), params.get("values", []))
    if family not in WARP_FAMILIES:
        raise ConfigError(f"Unknown warp family: {family}")
    cls = WARP_FAMILIES[family]
    if interval is not None and family != "log_staircase":
        if len(interval) != 2:
            raise ConfigError("interval must have two entries")
        params["a"], params["b"] = (parse_extended(v) for v in interval)
    try:
        return cls(**params)
    except TypeError as e:
        raise ConfigError(f"Bad parameters for warp family {family}: {e}")


def warp_from_config(spacetime: Dict, base_dir: Optional[Path] = None) -> WarpFunction:
    """Build the warp described by the ``spacetime`` config section."""
    params = dict(spacetime.get("params") or {})
    if spacetime["family"] == "tabulated" and "csv" in params and base_dir is not None:
        csv_path = Path(params["csv"])
        params["csv"] = str(csv_path if csv_path.is_absolute() else Path(base_dir) / csv_path)
    warp = make_warp(spacetime["family"], params, spacetime.get("interval"))
    if "strip" in spacetime:
        lo, hi = (parse_extended(v) for v in spacetime["strip"])
        warp = warp.restrict(lo, hi)
    logger.debug(f"Built warp {warp!r}")
    return warp
