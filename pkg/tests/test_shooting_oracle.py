import math

import numpy as np
import pytest

from fiber_geometry import Circle, RealLine
from geodesic_connector import SpacetimePoint, default_L_max, solve_connection
from grw_errors import DomainError
from shooting_oracle import (confirm_spec, default_sweep_grid, integrate_ivp, integrate_to_arclength,
                             match_specs, sweep_oracle)
from solver_settings import SolverSettings
from warp_function import TrigPolynomialWarp


class TestIntegrateIVP:
    def test_energy_is_conserved(self, cosh_warp):
        curve = integrate_ivp(cosh_warp, 0.0, 0.5, t_span=(0.0, 10.0))
        assert curve.status == "complete"
        assert curve.D == pytest.approx(0.75)
        assert curve.drift < 1e-9
        edge = math.acosh(1.0 / math.sqrt(0.75))
        assert curve.tau.max() == pytest.approx(edge, abs=1e-4)
        assert curve.tau.min() == pytest.approx(-edge, abs=1e-4)
        assert np.all(np.diff(curve.r) >= 0)

    def test_c_zero_escapes_through_finite_end(self, concave_warp):
        curve = integrate_ivp(concave_warp, 0.0, 1.0, c=0.0, t_span=(0.0, 2.0), samples=21)
        assert curve.status == "escape"
        assert curve.tau.max() < 1.0
        assert np.all(curve.r == 0.0)

    def test_negative_c_is_rejected(self, cosh_warp):
        with pytest.raises(DomainError):
            integrate_ivp(cosh_warp, 0.0, 0.5, c=-1.0)

    def test_finite_end_event(self, concave_warp):
        curve = integrate_ivp(concave_warp, 0.0, 2.0, t_span=(0.0, 5.0))
        assert curve.status == "escape"
        assert curve.tau[-1] < 1.0


class TestArclength:
    def test_de_sitter_bounce(self, cosh_warp):
        states = integrate_to_arclength(cosh_warp, 0.0, math.sqrt(0.5), 1.0, [math.pi, 1.0])
        assert [s.L for s in states] == [1.0, math.pi]
        first, second = states
        assert first.tau == pytest.approx(math.atanh(math.sqrt(0.5) * math.sin(1.0)), abs=1e-8)
        assert first.bounces == 0
        assert second.tau == pytest.approx(0.0, abs=1e-8)
        assert second.bounces == 1
        assert second.v < 0

    def test_needs_positive_c(self, cosh_warp):
        with pytest.raises(DomainError):
            integrate_to_arclength(cosh_warp, 0.0, 1.0, 0.0, [1.0])
        assert integrate_to_arclength(cosh_warp, 0.0, 1.0, 1.0, []) == []


class TestConfirm:
    def test_minkowski_connection(self, flat_warp):
        assert confirm_spec(flat_warp, 0.0, 2.0, -3.0, 1, 1.0) < 1e-8
        assert confirm_spec(flat_warp, 0.0, 2.0, -2.0, 1, 1.0) > 1e-2

    def test_base_geodesic_needs_no_integration(self, flat_warp):
        assert confirm_spec(flat_warp, 0.0, 2.0, -1.0, 1, 0.0, c=0.0) == 0.0


class TestSweep:
    def test_hits_and_matching(self, flat_warp):
        report = sweep_oracle(flat_warp, 0.0, 2.0, np.linspace(3.9, 4.1, 5), [1.0])
        assert len(report.samples) == 5
        assert [round(h.K, 9) for h in report.hits] == [4.0]
        assert match_specs(report, {1.0: [4.0]}, 2)["equivalent"]
        unmatched = match_specs(report, {1.0: [10.0]}, 2)
        assert not unmatched["equivalent"]
        assert unmatched["unmatched"][0]["L"] == 1.0

    def test_empty_inputs(self, flat_warp):
        assert sweep_oracle(flat_warp, 0.0, 1.0, [], [1.0]).samples == []
        assert sweep_oracle(flat_warp, 0.0, 1.0, [1.0], [0.0]).samples == []

    def test_grid(self, cosh_warp, rng):
        grid = default_sweep_grid(cosh_warp, 0.0, 40, rng=rng)
        assert np.all(np.diff(grid) > 0)
        assert grid.min() < -900.0 and grid.max() > 900.0
        assert np.count_nonzero(np.abs(grid) <= 1.1) >= 15

    @pytest.mark.slow
    def test_no_hits_for_antipodes_off_the_waist(self, cosh_warp, rng):
        grid = default_sweep_grid(cosh_warp, 0.0, 60, rng=rng)
        report = sweep_oracle(cosh_warp, 0.0, 1.0, grid, [math.pi, 3.0 * math.pi])
        assert report.hits == []
        assert min(report.min_residual().values()) > 1e-3


@pytest.mark.slow
def test_dense_antipode_sweep_has_no_hits(cosh_warp, rng):
    grid = default_sweep_grid(cosh_warp, 0.0, 10_000, rng=rng)
    assert grid.size >= 9_000
    report = sweep_oracle(cosh_warp, 0.0, 1.0, grid, [math.pi, 3.0 * math.pi], tol=1e-3)
    assert report.hits == []


@pytest.mark.slow
@pytest.mark.parametrize("fiber", [RealLine(), Circle(radius=1.0)], ids=["line", "circle"])
def test_solver_agrees_with_shooting_on_trig_warps(fiber, rng):
    settings = SolverSettings(n_max=3)
    worst = 0.0
    for _ in range(3):
        c1, s1 = (float(v) for v in rng.uniform(-0.6, 0.6, size=2))
        w = TrigPolynomialWarp(offset=2.0, cos=[c1], sin=[s1])
        tau0, tau1 = (float(v) for v in rng.uniform(-1.5, 1.5, size=2))
        x0, x1 = fiber.pair_at_distance(float(rng.uniform(0.2, 1.5)))
        z0, z1 = SpacetimePoint(tau0, x0), SpacetimePoint(tau1, x1)
        specs = solve_connection(w, fiber, z0, z1, settings)
        assert specs
        spec_K = {}
        for spec in specs:
            if spec.K is None:
                continue
            spec_K.setdefault(spec.L, []).append(spec.K)
            worst = max(worst, confirm_spec(w, tau0, tau1, spec.D, spec.epsilon, spec.L, spec.c))
        L_max = default_L_max(w, fiber, z0, z1, settings)
        lengths = [g.length for g in fiber.geodesic_lengths(x0, x1, L_max) if not g.is_constant]
        report = sweep_oracle(w, tau0, tau1, default_sweep_grid(w, tau0, 400, settings, rng=rng), lengths)
        assert match_specs(report, spec_K, settings.n_max)["unmatched"] == []
    assert worst < 1e-6
