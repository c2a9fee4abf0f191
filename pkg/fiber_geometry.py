#!/usr/bin/env python3
"""
Model fibers (F, g) for GRW spacetimes.

Only four pieces of fiber data enter the connectivity and conjugacy
computations: the distance, the set of connecting geodesic lengths,
the conjugate schedule along each connecting geodesic, and the convexity
class. Custom fibers subclass FiberGeometry and provide exactly those.

Shipped families:
- line         the real line (strongly convex, complete, no conjugate points)
- interval     open interval (0, length)
- euclidean    R^n
- circle       circle of radius R (weakly convex only)
- sphere       round sphere S^n of radius R embedded in R^(n+1)
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from grw_errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

ON_MANIFOLD_TOL = 1e-12


@dataclass(frozen=True)
class FiberPoint:
    coords: Tuple[float, ...]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    def to_list(self) -> List[float]:
        return [float(c) for c in self.coords]


@dataclass(frozen=True)
class FiberGeodesic:
    """Unit-speed fiber geodesic from start to end of the given length"""

    start: FiberPoint
    end: FiberPoint
    length: float
    branch: str
    winding: int = 0
    # unit tangent at start (ambient coordinates); (+1,) / (-1,) for 1-D fibers
    direction: Tuple[float, ...] = ()

    @property
    def is_constant(self) -> bool:
        return self.branch == "constant"

    def to_dict(self) -> Dict:
        return {
            "start": self.start.to_list(),
            "end": self.end.to_list(),
            "length": self.length,
            "branch": self.branch,
            "winding": self.winding,
        }


class FiberGeometry(ABC):
    """Riemannian fiber seen through distance, lengths, conjugate schedule and convexity"""

    family = "abstract"
    weakly_convex = True
    strongly_convex = False
    complete = True
    conjugate_free = True

    def __init__(self, dim: int):
        if not (isinstance(dim, int) and dim >= 1):
            raise DomainError(f"Fiber dimension must be a positive integer, got {dim!r}")
        self.dim = dim

    @property
    @abstractmethod
    def diameter(self) -> float:
        """diam(F), +inf for unbounded fibers."""

    @abstractmethod
    def point(self, coords: Sequence[float]) -> FiberPoint:
        """Validated point from coordinates."""

    @abstractmethod
    def distance(self, x: FiberPoint, y: FiberPoint) -> float:
        pass

    @abstractmethod
    def geodesic_lengths(self, x: FiberPoint, y: FiberPoint, L_max: float) -> List[FiberGeodesic]:
        """Connecting geodesics of length <= L_max, sorted by length."""

    @abstractmethod
    def position_at(self, geodesic: FiberGeodesic, r: float) -> FiberPoint:
        """Point at arclength r along a connecting geodesic."""

    def conjugate_schedule(self, geodesic: FiberGeodesic) -> List[Tuple[float, int]]:
        return []

    def morse_index(self, geodesic: FiberGeodesic) -> int:
        """Sum of conjugate multiplicities strictly inside the geodesic."""
        return sum(mu for r, mu in self.conjugate_schedule(geodesic) if 0 < r < geodesic.length)

    def pair_weakly_convex(self, x: FiberPoint, y: FiberPoint) -> bool:
        """True when a minimizing geodesic joins x and y inside the fiber."""
        return self.weakly_convex

    def path_space_betti(self, q_max: int, x: FiberPoint, y: FiberPoint,
                         L_max: float) -> List[int]:
        """Betti numbers of the space of paths from x to y, degrees 0..q_max."""
        return [1] + [0] * q_max

    def pair_at_distance(self, L: float) -> Tuple[FiberPoint, FiberPoint]:
        """Two points at fiber distance L (used to build witness pairs)."""
        raise DomainError(f"{self.family} fiber does not build pairs at a given distance")

    def _check_reachable_distance(self, L: float, strict: bool = False):
        too_far = L >= self.diameter if strict else L > self.diameter
        if not L >= 0 or too_far:
            raise DomainError(f"No pair at distance {L} on a {self.family} fiber of diameter {self.diameter}")

    def constant_geodesic(self, x: FiberPoint) -> FiberGeodesic:
        return FiberGeodesic(start=x, end=x, length=0.0, branch="constant")

    def _check_pair(self, x: FiberPoint, y: FiberPoint):
        for p in (x, y):
            if len(p.coords) != self.ambient_dim:
                raise DomainError(f"{self.family} fiber expects {self.ambient_dim} coordinates, "
                                  f"got {len(p.coords)}")

    @property
    def ambient_dim(self) -> int:
        return self.dim

    def describe(self) -> Dict:
        return {
            "family": self.family,
            "dim": self.dim,
            "diameter": "inf" if math.isinf(self.diameter) else self.diameter,
            "weakly_convex": self.weakly_convex,
            "strongly_convex": self.strongly_convex,
            "complete": self.complete,
            "conjugate_free": self.conjugate_free,
        }

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class EuclideanSpace(FiberGeometry):
    family = "euclidean"
    strongly_convex = True

    @property
    def diameter(self) -> float:
        return math.inf

    def point(self, coords):
        coords = tuple(float(c) for c in coords)
        if len(coords) != self.dim:
            raise DomainError(f"Expected {self.dim} coordinates, got {len(coords)}")
        return FiberPoint(coords)

    def distance(self, x, y):
        self._check_pair(x, y)
        return float(np.linalg.norm(y.array - x.array))

    def geodesic_lengths(self, x, y, L_max):
        d = self.distance(x, y)
        if d == 0.0:
            return [self.constant_geodesic(x)]
        if d > L_max:
            return []
        u = (y.array - x.array) / d
        return [FiberGeodesic(x, y, d, "minimizing", 0, tuple(u))]

    def position_at(self, geodesic, r):
        if geodesic.is_constant:
            return geodesic.start
        return FiberPoint(tuple(geodesic.start.array + r * np.asarray(geodesic.direction)))

    def pair_at_distance(self, L):
        self._check_reachable_distance(L)
        origin = (0.0,) * self.dim
        return FiberPoint(origin), FiberPoint((float(L),) + origin[1:])


class RealLine(EuclideanSpace):
    family = "line"

    def __init__(self, dim: int = 1):
        if dim != 1:
            raise DomainError("The line fiber is one-dimensional")
        super().__init__(1)


class BoundedInterval(RealLine):
    """Open interval (0, length); pairs are always joined inside it"""

    family = "interval"
    complete = False

    def __init__(self, length: float = 1.0, dim: int = 1):
        super().__init__(dim)
        if not length > 0:
            raise DomainError(f"Interval length must be positive, got {length}")
        self.length = float(length)

    @property
    def diameter(self) -> float:
        return self.length

    def point(self, coords):
        p = super().point(coords)
        if not 0.0 < p.coords[0] < self.length:
            raise DomainError(f"{p.coords[0]} is outside the fiber interval (0, {self.length})")
        return p

    def pair_weakly_convex(self, x, y):
        # the segment between two interior points never leaves the open interval
        return 0.0 < x.coords[0] < self.length and 0.0 < y.coords[0] < self.length

    def pair_at_distance(self, L):
        self._check_reachable_distance(L, strict=True)
        mid = 0.5 * self.length
        return FiberPoint((mid - 0.5 * L,)), FiberPoint((mid + 0.5 * L,))

    def describe(self):
        return {**super().describe(), "length": self.length}


class Circle(FiberGeometry):
    family = "circle"

    def __init__(self, radius: float = 1.0, dim: int = 1):
        if dim != 1:
            raise DomainError("The circle fiber is one-dimensional")
        super().__init__(1)
        if not radius > 0:
            raise DomainError(f"Circle radius must be positive, got {radius}")
        self.R = float(radius)

    @property
    def diameter(self) -> float:
        return math.pi * self.R

    def point(self, coords):
        coords = tuple(float(c) for c in coords)
        if len(coords) != 1:
            raise DomainError("Circle points are given by one angle")
        return FiberPoint((math.remainder(coords[0], 2.0 * math.pi),))

    def _ccw_angle(self, x, y) -> float:
        self._check_pair(x, y)
        return (y.coords[0] - x.coords[0]) % (2.0 * math.pi)

    def distance(self, x, y):
        phi = self._ccw_angle(x, y)
        return self.R * min(phi, 2.0 * math.pi - phi)

    def geodesic_lengths(self, x, y, L_max):
        phi = self._ccw_angle(x, y)
        loop = 2.0 * math.pi * self.R
        found = []
        if phi == 0.0:
            found.append(self.constant_geodesic(x))
            arcs = [(loop, +1.0, "ccw"), (loop, -1.0, "cw")]
        else:
            arcs = [(self.R * phi, +1.0, "ccw"), (self.R * (2.0 * math.pi - phi), -1.0, "cw")]
        for base, sign, label in arcs:
            k = 0
            while base + k * loop <= L_max:
                found.append(FiberGeodesic(x, y, base + k * loop, label if k == 0 else f"{label}+{k}",
                                           k, (sign,)))
                k += 1
        found.sort(key=lambda g: (g.length, g.branch))
        return found

    def position_at(self, geodesic, r):
        if geodesic.is_constant:
            return geodesic.start
        return self.point((geodesic.start.coords[0] + geodesic.direction[0] * r / self.R,))

    def path_space_betti(self, q_max, x, y, L_max):
        # one contractible component per homotopy class reached within L_max
        components = sum(1 for g in self.geodesic_lengths(x, y, L_max) if not g.is_constant)
        if self._ccw_angle(x, y) == 0.0:
            components += 1
        return [components] + [0] * q_max

    def pair_at_distance(self, L):
        self._check_reachable_distance(L)
        return self.point((0.0,)), self.point((L / self.R,))

    def describe(self):
        return {**super().describe(), "radius": self.R}


class RoundSphere(FiberGeometry):
    """S^n of radius R as the sphere |x| = R in R^(n+1)"""

    family = "sphere"
    conjugate_free = False

    def __init__(self, dim: int = 2, radius: float = 1.0):
        super().__init__(dim)
        if dim < 2:
            raise DomainError("Use the circle family for one-dimensional spheres")
        if not radius > 0:
            raise DomainError(f"Sphere radius must be positive, got {radius}")
        self.R = float(radius)

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1

    @property
    def diameter(self) -> float:
        return math.pi * self.R

    @property
    def north(self) -> FiberPoint:
        return FiberPoint((self.R,) + (0.0,) * self.dim)

    def antipode(self, x: FiberPoint) -> FiberPoint:
        return FiberPoint(tuple(-c for c in x.coords))

    def point_at_angle(self, theta: float) -> FiberPoint:
        """Point at polar angle theta from the north pole in the first coordinate plane."""
        return FiberPoint((self.R * math.cos(theta), self.R * math.sin(theta)) + (0.0,) * (self.dim - 1))

    def point(self, coords):
        v = np.asarray([float(c) for c in coords])
        if v.size != self.ambient_dim:
            raise DomainError(f"S^{self.dim} points need {self.ambient_dim} coordinates, got {v.size}")
        if abs(np.linalg.norm(v) - self.R) > ON_MANIFOLD_TOL * max(1.0, self.R):
            raise DomainError(f"Point {v.tolist()} is not on the sphere of radius {self.R}")
        return FiberPoint(tuple(v))

    def _angle(self, x, y) -> float:
        self._check_pair(x, y)
        u, v = x.array / self.R, y.array / self.R
        return 2.0 * math.atan2(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v)))

    def distance(self, x, y):
        return self.R * self._angle(x, y)

    def _tangent_towards(self, x: FiberPoint, y: FiberPoint) -> np.ndarray:
        u, v = x.array / self.R, y.array / self.R
        w = v - np.dot(u, v) * u
        norm = np.linalg.norm(w)
        if norm > 1e-12:
            return w / norm
        # antipodal or equal: any unit vector orthogonal to u
        for e in np.eye(self.ambient_dim):
            w = e - np.dot(u, e) * u
            if np.linalg.norm(w) > 0.5:
                return w / np.linalg.norm(w)
        raise DomainError("Could not build a tangent direction")

    def geodesic_lengths(self, x, y, L_max):
        theta = self._angle(x, y)
        loop = 2.0 * math.pi * self.R
        found = []
        if theta == 0.0:
            # closed great circles through x come in degenerate families; only the constant is listed
            return [self.constant_geodesic(x)]
        tangent = self._tangent_towards(x, y)
        if abs(theta - math.pi) <= 1e-12:
            k = 0
            while (2 * k + 1) * math.pi * self.R <= L_max:
                found.append(FiberGeodesic(x, y, (2 * k + 1) * math.pi * self.R,
                                           "minimizing" if k == 0 else f"winding+{k}", k, tuple(tangent)))
                k += 1
            return found
        arcs = [(self.R * theta, tangent, "minimizing"),
                (self.R * (2.0 * math.pi - theta), -tangent, "reversed")]
        for base, direction, label in arcs:
            k = 0
            while base + k * loop <= L_max:
                found.append(FiberGeodesic(x, y, base + k * loop, label if k == 0 else f"{label}+{k}",
                                           k, tuple(direction)))
                k += 1
        found.sort(key=lambda g: g.length)
        return found

    def position_at(self, geodesic, r):
        if geodesic.is_constant:
            return geodesic.start
        s = r / self.R
        p = math.cos(s) * geodesic.start.array + self.R * math.sin(s) * np.asarray(geodesic.direction)
        return FiberPoint(tuple(p))

    def conjugate_schedule(self, geodesic):
        if geodesic.is_constant:
            return []
        schedule = []
        k = 1
        while k * math.pi * self.R < geodesic.length:
            schedule.append((k * math.pi * self.R, self.dim - 1))
            k += 1
        return schedule

    def path_space_betti(self, q_max, x, y, L_max):
        step = self.dim - 1
        return [1 if q % step == 0 else 0 for q in range(q_max + 1)]

    def pair_at_distance(self, L):
        self._check_reachable_distance(L)
        if L == self.diameter:
            return self.north, self.antipode(self.north)
        return self.north, self.point_at_angle(L / self.R)

    def describe(self):
        return {**super().describe(), "radius": self.R}


FIBER_FAMILIES = {
    "line": RealLine,
    "interval": BoundedInterval,
    "euclidean": EuclideanSpace,
    "circle": Circle,
    "sphere": RoundSphere,
}


def fiber_from_config(fiber: Dict) -> FiberGeometry:
    """Build the fiber described by the ``fiber`` config section."""
    params = dict(fiber)
    family = params.pop("family", None)
    if family not in FIBER_FAMILIES:
        raise ConfigError(f"Unknown fiber family: {family}")
    if "dim" in params:
        params["dim"] = int(params["dim"])
    try:
        F = FIBER_FAMILIES[family](**params)
    except TypeError as e:
        raise ConfigError(f"Bad parameters for fiber family {family}: {e}")
    logger.debug(f"Built fiber {F!r}")
    return F
