import dataclasses
import logging
import math

import numpy as np
import pytest

import geodesic_connector
from bounce_integrals import ARCLENGTH
from fiber_geometry import FiberGeodesic
from geodesic_connector import (LIGHTLIKE, LIGHTLIKE_TOL, NOTE_CRITICAL, SPACELIKE, TIMELIKE, GeodesicConnector,
                                GeodesicSpec, SpacetimePoint, causal_uniqueness, relate, solve_connection,
                                static_dual, tau_of_K, time_budget)
from grw_errors import DomainError, PreconditionError
from solver_settings import SolverSettings

FEW_BOUNCES = SolverSettings(n_max=2)


@pytest.fixture
def minkowski(flat_warp, line):
    return GeodesicConnector(flat_warp, line, FEW_BOUNCES)


def test_parse_point(sphere):
    z = SpacetimePoint.parse("0.5, 1, 0, 0", sphere)
    assert z.tau == 0.5
    assert z.x == sphere.north
    assert z.to_list() == [0.5, 1.0, 0.0, 0.0]
    with pytest.raises(DomainError):
        SpacetimePoint.parse("1.0", sphere)
    with pytest.raises(DomainError):
        SpacetimePoint.parse("a,b,c", sphere)


class TestRelate:
    def test_flat_timelike(self, flat_warp, line):
        rel = relate(flat_warp, line, SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0])))
        assert rel.kind == TIMELIKE
        assert rel.chronological
        assert rel.direction == "future"
        assert rel.time_budget == pytest.approx(2.0)

    def test_flat_lightlike(self, flat_warp, line):
        rel = relate(flat_warp, line, SpacetimePoint(1.0, line.point([1.0])), SpacetimePoint(0.0, line.point([0.0])))
        assert rel.kind in (LIGHTLIKE, LIGHTLIKE_TOL)
        assert rel.causal and not rel.chronological
        assert rel.direction == "past"

    def test_de_sitter_budget_is_bounded(self, cosh_warp, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(1.0, line.point([1.0]))
        # integral of sech over [0, 1]
        assert time_budget(cosh_warp, 0.0, 1.0) == pytest.approx(2.0 * math.atan(math.tanh(0.5)), rel=1e-9)
        assert relate(cosh_warp, line, z0, z1).kind == SPACELIKE


class TestMinkowski:
    def test_unique_timelike_connection(self, minkowski, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0]))
        specs = minkowski.connect(z0, z1)
        assert len(specs) == 1
        spec = specs[0]
        assert spec.D == pytest.approx(-3.0, rel=1e-7)
        assert spec.K == pytest.approx(4.0, rel=1e-7)
        assert spec.epsilon == 1 and spec.n == 0
        assert spec.character == TIMELIKE
        assert minkowski.stats["pairs"] == 1

    def test_tau_of_K(self, flat_warp):
        assert tau_of_K(flat_warp, 0.0, 1.0, 4.0).tau_end == pytest.approx(2.0, rel=1e-9)
        assert tau_of_K(flat_warp, 0.0, 0.0, 4.0).tau_end == 0.0

    def test_curve(self, minkowski, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0]))
        curve = minkowski.curves(minkowski.connect(z0, z1), z0, z1, samples=50)[0]
        assert curve.tau[0] == 0.0
        assert curve.tau[-1] == pytest.approx(2.0)
        # dt = dtau / sqrt(1 - D) on a flat base
        assert curve.t[-1] == pytest.approx(1.0, rel=1e-7)
        assert curve.r[-1] == pytest.approx(1.0, rel=1e-7)
        assert np.all(np.diff(curve.r) >= 0)
        assert curve.residual < 1e-6
        assert curve.rows()[0][:3] == [0.0, 0.0, 0.0]
        assert minkowski.stats["curves"] == 1

    def test_causal_uniqueness(self, flat_warp, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0]))
        report = causal_uniqueness(flat_warp, line, z0, z1, FEW_BOUNCES)
        assert report["D0"] == pytest.approx(-3.0, rel=1e-8)
        assert report["monotone"]
        assert report["D_match"]
        assert report["unique"]

    def test_uniqueness_needs_the_connector_at_D0(self, flat_warp, line, monkeypatch):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0]))
        solve = geodesic_connector.solve_connection

        def shifted(*args, **kwargs):
            return [dataclasses.replace(s, D=s.D + 1e-3) for s in solve(*args, **kwargs)]

        monkeypatch.setattr(geodesic_connector, "solve_connection", shifted)
        report = causal_uniqueness(flat_warp, line, z0, z1, FEW_BOUNCES)
        assert report["D0"] == pytest.approx(-3.0, rel=1e-8)
        assert len(report["specs"]) == 1
        assert not report["D_match"]
        assert not report["unique"]

    def test_curve_residual_counts_arclength_setback(self, minkowski, line, monkeypatch, caplog):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0]))
        specs = minkowski.connect(z0, z1)
        integrate = geodesic_connector.cumulative_integrals

        def bumped(w, nodes, D, weight=ARCLENGTH, settings=FEW_BOUNCES):
            out = integrate(w, nodes, D, weight, settings)
            if weight == ARCLENGTH:
                out[out.size // 2] += 0.2
            return out

        monkeypatch.setattr(geodesic_connector, "cumulative_integrals", bumped)
        with caplog.at_level(logging.WARNING, logger="geodesic_connector"):
            curve = minkowski.curves(specs, z0, z1, samples=50)[0]
        assert np.all(np.diff(curve.r) >= 0)
        assert curve.residual > 0.1
        assert "fiber arclength decreases" in caplog.text

    def test_static_dual_swaps_characters(self, flat_warp, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(2.0, line.point([1.0]))
        report = static_dual(flat_warp, line, z0, z1, FEW_BOUNCES)
        assert report["relation"] == SPACELIKE
        assert report["geodesics"][0]["D_static"] == pytest.approx(3.0, rel=1e-7)
        assert report["geodesics"][0]["character"] == SPACELIKE
        assert "connected_verdict" not in report

    def test_base_geodesic_over_one_fiber_point(self, minkowski, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.5])), SpacetimePoint(1.0, line.point([0.5]))
        specs = minkowski.connect(z0, z1)
        assert [s.note for s in specs] == ["base"]
        curve = minkowski.curves(specs, z0, z1, samples=10)[0]
        assert curve.r.max() == 0.0
        assert curve.residual == pytest.approx(0.0, abs=1e-12)


class TestPreconditions:
    def test_uniqueness_needs_strong_convexity(self, cosh_warp, sphere):
        z0, z1 = SpacetimePoint(0.0, sphere.north), SpacetimePoint(1.0, sphere.point_at_angle(0.5))
        with pytest.raises(PreconditionError):
            causal_uniqueness(cosh_warp, sphere, z0, z1)

    def test_static_dual_needs_dimension_one(self, cosh_warp, sphere):
        z0, z1 = SpacetimePoint(0.0, sphere.north), SpacetimePoint(1.0, sphere.point_at_angle(0.5))
        with pytest.raises(PreconditionError):
            static_dual(cosh_warp, sphere, z0, z1)

    def test_spacelike_pair_has_no_uniqueness_report(self, cosh_warp, line):
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(1.0, line.point([1.0]))
        with pytest.raises(PreconditionError):
            causal_uniqueness(cosh_warp, line, z0, z1)

    def test_point_outside_interval(self, concave_warp, line):
        with pytest.raises(DomainError):
            solve_connection(concave_warp, line, SpacetimePoint(0.0, line.point([0.0])),
                             SpacetimePoint(2.0, line.point([1.0])))


def test_spec_character():
    g = FiberGeodesic(start=None, end=None, length=1.0, branch="minimizing")
    spec = GeodesicSpec(0.0, 1.0, D=-0.5, epsilon=1, K=1.5, n=0, L=1.0, fiber_geodesic=g)
    assert spec.character == TIMELIKE
    spec.D = 0.0
    assert spec.character == LIGHTLIKE
    spec.D = 0.25
    assert spec.character == SPACELIKE


@pytest.mark.slow
class TestDeSitter:
    SETTINGS = SolverSettings(n_max=3)

    def test_critical_level_geodesics(self, cosh_warp, sphere):
        z0, z1 = SpacetimePoint(0.0, sphere.north), SpacetimePoint(0.0, sphere.antipode(sphere.north))
        specs = solve_connection(cosh_warp, sphere, z0, z1, self.SETTINGS)
        critical = [s for s in specs if s.note == NOTE_CRITICAL]
        np.testing.assert_allclose(sorted(s.L for s in critical), [math.pi, 3.0 * math.pi])
        assert all(s.residual == 0.0 for s in critical)
        assert all(s.D == pytest.approx(1.0) for s in critical)

    def test_antipodal_pair_off_the_waist_is_not_joined(self, cosh_warp, sphere):
        connector = GeodesicConnector(cosh_warp, sphere, self.SETTINGS)
        z0, z1 = SpacetimePoint(0.0, sphere.north), SpacetimePoint(1.0, sphere.antipode(sphere.north))
        report = connector.connection_report(z0, z1)
        assert report["geodesics"] == []
        assert report["relation"]["kind"] == SPACELIKE
        assert report["certificate"]["holds"]


@pytest.mark.slow
def test_minkowski_levels_from_random_pairs(flat_warp, line, rng):
    for _ in range(20):
        dtau, d = (float(v) for v in rng.uniform(0.1, 3.0, size=2))
        z0, z1 = SpacetimePoint(0.0, line.point([0.0])), SpacetimePoint(dtau, line.point([d]))
        specs = solve_connection(flat_warp, line, z0, z1, FEW_BOUNCES)
        assert len(specs) == 1
        assert specs[0].D == pytest.approx(1.0 - (dtau / d) ** 2, abs=1e-9)


@pytest.mark.slow
def test_causal_pairs_in_de_sitter_are_joined_once(cosh_warp, line, rng):
    for _ in range(50):
        tau0, tau1 = (float(v) for v in rng.uniform(-2.0, 2.0, size=2))
        if abs(tau1 - tau0) < 0.1:
            tau1 = tau0 + 0.5
        d = float(rng.uniform(0.05, 0.95)) * time_budget(cosh_warp, tau0, tau1)
        z0, z1 = SpacetimePoint(tau0, line.point([0.0])), SpacetimePoint(tau1, line.point([d]))
        report = causal_uniqueness(cosh_warp, line, z0, z1, FEW_BOUNCES)
        assert report["kind"] == TIMELIKE
        assert report["monotone"]
        assert report["unique"]
