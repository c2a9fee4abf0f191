import math

import numpy as np
import pytest

from conjugate_points import (conjugate_points, covering_premise, morse_polynomials, non_escape,
                              spectral_flow, sturm_solve)
from geodesic_connector import NOTE_BASE, NOTE_CRITICAL, GeodesicSpec, SpacetimePoint
from grw_errors import DomainError
from solver_settings import SolverSettings
from warp_function import CoshWarp, PolynomialWarp, PowerQuadraticWarp, from_level


def reversed_quarter(sphere):
    """The fiber geodesic of length 3 pi / 2 from the north pole to the point at polar angle 3 pi / 2."""
    geodesics = sphere.geodesic_lengths(sphere.north, sphere.point_at_angle(1.5 * math.pi), 2.0 * math.pi)
    return next(g for g in geodesics if g.length == pytest.approx(1.5 * math.pi))


class TestSturm:
    def test_no_zero_without_curvature(self, flat_warp):
        assert sturm_solve(flat_warp, 0.0, 5.0) is None
        assert sturm_solve(flat_warp, 0.0, 0.0) is None

    def test_no_zero_for_convex_warp(self, cosh_warp):
        # a'' = a from a zero grows like sinh
        assert sturm_solve(cosh_warp, -1.0, 2.0) is None
        assert sturm_solve(cosh_warp, 2.0, -1.0) is None

    @pytest.mark.parametrize("ell", [1.0, 2.0, 4.0])
    def test_spectral_flow_flat(self, flat_warp, ell):
        (tau, lam), = spectral_flow(flat_warp, 0.0, [ell])
        assert tau == ell
        assert lam == pytest.approx((math.pi / ell) ** 2, rel=1e-7)

    def test_spectral_flow_shifted_by_constant_coefficient(self, cosh_warp):
        flow = spectral_flow(cosh_warp, 0.0, [2.0, 1.0])
        assert [tau for tau, _ in flow] == [1.0, 2.0]
        assert flow[0][1] == pytest.approx(math.pi ** 2 + 1.0, rel=1e-7)
        assert flow[1][1] == pytest.approx((0.5 * math.pi) ** 2 + 1.0, rel=1e-7)

    def test_spectral_flow_needs_later_points(self, flat_warp):
        with pytest.raises(DomainError):
            spectral_flow(flat_warp, 1.0, [0.5])


class TestConjugatePoints:
    def test_timelike_geodesic_on_sphere_fiber(self, flat_warp, sphere):
        g = reversed_quarter(sphere)
        spec = GeodesicSpec(0.0, 2.0 * math.pi, D=-7.0 / 9.0, epsilon=1, K=16.0 / 9.0, n=0,
                            L=1.5 * math.pi, fiber_geodesic=g)
        report = conjugate_points(flat_warp, sphere, spec)
        assert report.exact
        assert len(report.entries) == 1
        entry = report.entries[0]
        assert entry.r == pytest.approx(math.pi)
        assert entry.tau == pytest.approx(4.0 * math.pi / 3.0, rel=1e-8)
        assert entry.multiplicity == 1
        assert report.morse_index == 1

    def test_critical_level_adds_the_base_mode(self, cosh_warp, sphere):
        g = reversed_quarter(sphere)
        spec = GeodesicSpec(0.0, 0.0, D=1.0, epsilon=1, K=0.0, n=0, L=1.5 * math.pi,
                            fiber_geodesic=g, note=NOTE_CRITICAL)
        report = conjugate_points(cosh_warp, sphere, spec)
        assert len(report.entries) == 1
        entry = report.entries[0]
        assert entry.r == pytest.approx(math.pi)
        assert entry.multiplicity == 2
        assert entry.source == "fiber+base"

    def test_base_geodesic_runs_the_sturm_check(self, flat_warp, line):
        x = line.point([0.0])
        spec = GeodesicSpec(0.0, 2.0, D=-1.0, epsilon=1, K=None, n=0, L=0.0,
                            fiber_geodesic=line.constant_geodesic(x), c=0.0, note=NOTE_BASE)
        report = conjugate_points(flat_warp, line, spec)
        assert report.entries == []
        assert report.sturm_check is True


class TestNonEscape:
    def test_flat(self, flat_warp, line):
        escape = non_escape(flat_warp)
        assert escape == {"timelike": {"a": True, "b": True}, "null": {"a": True, "b": True}}
        assert covering_premise(flat_warp, line)["premise"]

    def test_de_sitter(self, cosh_warp, sphere):
        escape = non_escape(cosh_warp)
        assert not escape["null"]["b"]
        assert not escape["timelike"]["a"]
        premise = covering_premise(cosh_warp, sphere)
        assert not premise["premise"]
        assert "fiber has conjugate points" in premise["failing"]
        assert "null geodesics escape at b" in premise["failing"]

    def test_power_tail_past_the_null_threshold(self):
        escape = non_escape(PowerQuadraticWarp(power=0.505))
        assert not escape["null"]["b"]
        assert not escape["null"]["a"]
        assert non_escape(PowerQuadraticWarp(power=0.25))["null"]["b"]

    def test_logarithmic_tail_keeps_null_geodesics(self):
        w = from_level(lambda t: (t * np.log(t)) ** -2.0,
                       lambda t: -2.0 * (t * np.log(t)) ** -3.0 * (np.log(t) + 1.0),
                       lambda t: (6.0 * (t * np.log(t)) ** -4.0 * (np.log(t) + 1.0) ** 2
                                  - 2.0 * (t * np.log(t)) ** -3.0 / t),
                       a=2.0, b=math.inf)
        assert non_escape(w)["null"]["b"]


@pytest.mark.slow
def test_morse_relations_on_static_sphere_product(flat_warp, sphere):
    settings = SolverSettings(L_max=7.0 * math.pi, q_max=5, n_max=2)
    z0 = SpacetimePoint(0.0, sphere.north)
    z1 = SpacetimePoint(1.0, sphere.point_at_angle(0.5 * math.pi))
    report = morse_polynomials(flat_warp, sphere, z0, z1, settings)
    assert report.spacetime == [1] * 6
    assert report.fiber == [1] * 6
    assert report.betti == [1] * 6
    assert report.quotient == [0] * 6
    assert report.quotient_nonnegative
    assert all(report.inequalities["upper_bound"].values())
    assert all(report.inequalities["nonvanishing"].values())
    assert report.hypotheses_verified
    assert report.specs == 7


@pytest.mark.slow
def test_convex_warps_keep_the_sturm_solution_positive(rng):
    for k in range(20):
        if k % 2:
            w = CoshWarp(amplitude=float(rng.uniform(0.5, 2.0)), rate=float(rng.uniform(0.3, 1.5)),
                         center=float(rng.uniform(-1.0, 1.0)))
        else:
            c1, c2 = float(rng.uniform(-1.0, 1.0)), float(rng.uniform(0.1, 1.0))
            w = PolynomialWarp([1.0 + c1 * c1 / (4.0 * c2), c1, c2])
        tau0 = float(rng.uniform(-2.0, 0.0))
        tau1 = tau0 + float(rng.uniform(0.5, 3.0))
        assert sturm_solve(w, tau0, tau1) is None
        flow = [lam for _, lam in spectral_flow(w, tau0, np.linspace(tau0, tau1, 5)[1:])]
        assert all(later < earlier for earlier, later in zip(flow, flow[1:]))


@pytest.mark.slow
def test_morse_relations_on_growing_power_warp(sphere):
    settings = SolverSettings(q_max=3, n_max=3)
    z0 = SpacetimePoint(0.0, sphere.north)
    z1 = SpacetimePoint(1.0, sphere.point_at_angle(0.5 * math.pi))
    report = morse_polynomials(PowerQuadraticWarp(power=0.25), sphere, z0, z1, settings)
    assert all(report.inequalities["upper_bound"].values())
    assert all(report.inequalities["nonvanishing"].values())
