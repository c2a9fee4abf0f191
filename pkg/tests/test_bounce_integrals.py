import math

import numpy as np
import pytest
from scipy.optimize import brentq

from bounce_integrals import (IntegralValue, REASON_TAIL, advance, arrival_lengths, decode_K, encode_K,
                              leg_sums, scan_arrivals, segment_integral, time_integral, turning_points)
from grw_errors import DomainError, PreconditionError
from warp_function import PowerQuadraticWarp, from_level


def level_antiderivative(u, D):
    """Antiderivative of (u + D) / sqrt(u) for the level 1/f^2 = 1 - tau, u = 1 - tau - D."""
    return (2.0 / 3.0) * u ** 1.5 + 2.0 * D * u ** 0.5


@pytest.mark.parametrize("alpha, beta, D", [
    (0.0, 0.5, 0.5),
    (0.1, 0.6, 0.4),
    (0.2, 0.9, -1.0),
    (0.0, 1.0, 0.0),
    (0.3, 0.7, 0.1),
])
def test_segment_integral_closed_form(linear_level_warp, alpha, beta, D):
    value = segment_integral(linear_level_warp, alpha, beta, D)
    assert value.is_finite
    u_lo, u_hi = 1.0 - beta - D, 1.0 - alpha - D
    expected = level_antiderivative(u_hi, D) - level_antiderivative(max(u_lo, 0.0), D)
    assert value.value == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_time_integral_closed_form(linear_level_warp):
    value = time_integral(linear_level_warp, 0.0, 0.5, 0.5)
    assert value.value == pytest.approx(2.0 * math.sqrt(0.5), rel=1e-8)


def test_null_ray_of_de_sitter(cosh_warp):
    # integral of sech over a half-line
    assert segment_integral(cosh_warp, 0.0, math.inf, 0.0).value == pytest.approx(0.5 * math.pi, rel=1e-8)
    elapsed = time_integral(cosh_warp, 0.0, math.inf, 0.0)
    assert elapsed.is_divergent
    assert elapsed.reason == REASON_TAIL


def test_segment_below_level_is_undefined(cosh_warp):
    value = segment_integral(cosh_warp, 0.0, 2.0, 0.5)
    assert value.kind == "undefined"
    with pytest.raises(DomainError):
        segment_integral(cosh_warp, 1.0, 0.0, 0.5)


def test_integral_value_arithmetic():
    total = IntegralValue.finite(1.0) + IntegralValue.finite(2.5)
    assert total.value == 3.5
    assert (total + IntegralValue.divergent("x")).is_divergent
    assert (IntegralValue.divergent("x") + IntegralValue.undefined()).kind == "undefined"
    assert IntegralValue.finite(-1e-18).value == 0.0


def test_turning_points_of_cosh(cosh_warp):
    tp = turning_points(cosh_warp, 0.0, 0.5)
    edge = math.acosh(math.sqrt(2.0))
    assert tp.a_star == pytest.approx(-edge, rel=1e-10)
    assert tp.b_star == pytest.approx(edge, rel=1e-10)
    assert not tp.tangent_at_b_star
    open_ends = turning_points(cosh_warp, 0.0, -1.0)
    assert open_ends.a_star == -math.inf and open_ends.b_star == math.inf


def test_turning_points_reject_points_below_level(cosh_warp):
    with pytest.raises(PreconditionError):
        turning_points(cosh_warp, 1.0, 0.9)


def test_critical_level_has_no_bouncing_geodesic(cosh_warp):
    # 1/f^2 has its maximum at 0, so D = 1 there only allows constant tau
    assert turning_points(cosh_warp, 0.0, 1.0).degenerate
    with pytest.raises(PreconditionError):
        leg_sums(cosh_warp, 0.0, 1.0, 1, 3)


def test_leg_sums_of_de_sitter(cosh_warp):
    sums = leg_sums(cosh_warp, 0.0, 0.5, 1, 3)
    values = [leg.value for leg in sums.legs]
    np.testing.assert_allclose(values, [0.5 * math.pi, math.pi, math.pi, math.pi], rtol=1e-7)
    np.testing.assert_allclose(sums.cumulative, [0.5 * math.pi, 1.5 * math.pi, 2.5 * math.pi, 3.5 * math.pi],
                               rtol=1e-7)
    assert sums.status == "complete"
    assert len(sums.sequence) == 5


def test_spacelike_leg_escapes(cosh_warp):
    sums = leg_sums(cosh_warp, 0.0, -1.0, 1, 4)
    assert sums.status == "escape"
    assert len(sums.legs) == 1
    assert sums.legs[0].value == pytest.approx(0.25 * math.pi, rel=1e-7)
    with pytest.raises(DomainError):
        leg_sums(cosh_warp, 0.0, 0.5, 2, 3)


def test_advance_on_the_linear_level(linear_level_warp):
    result = advance(linear_level_warp, 0.0, 0.75, 1, 1.0)
    assert result.status == "reached"
    assert result.n == 1
    assert result.direction == -1
    u = brentq(lambda v: level_antiderivative(v, 0.75) - 1.0 / 6.0, 0.0, 0.25)
    assert result.tau_end == pytest.approx(0.25 - u, abs=1e-8)


def test_advance_across_a_full_bounce(cosh_warp):
    result = advance(cosh_warp, 0.0, 0.5, 1, 2.0)
    assert result.n == 1
    assert result.direction == -1
    s = math.sqrt(0.5) * math.sin(0.5 * math.pi - (2.0 - 0.5 * math.pi))
    assert result.tau_end == pytest.approx(math.atanh(s), abs=1e-7)


def test_advance_escape(cosh_warp):
    result = advance(cosh_warp, 0.0, -1.0, 1, 10.0)
    assert result.status == "escape"
    assert result.tau_end == math.inf
    assert result.arclength == pytest.approx(0.25 * math.pi, rel=1e-7)
    with pytest.raises(PreconditionError):
        advance(cosh_warp, 0.0, 0.5, 1, 0.0)


def test_arrival_lengths_of_de_sitter(cosh_warp):
    first = math.asin(math.tanh(0.5) / math.sqrt(0.5))
    arrivals = arrival_lengths(cosh_warp, 0.0, 0.5, 0.5, 1, 3)
    expected = [first, math.pi - first, 2.0 * math.pi + first, 3.0 * math.pi - first]
    np.testing.assert_allclose(arrivals, expected, rtol=1e-7)
    assert arrival_lengths(cosh_warp, 0.0, 1.5, 0.5, 1, 3) == [None] * 4


def test_decode_and_encode_K(cosh_warp):
    assert decode_K(cosh_warp, 0.0, 0.25) == (0.75, 1)
    assert decode_K(cosh_warp, 0.0, -0.25) == (0.75, -1)
    # 1/f^2 is stationary at 0
    assert decode_K(cosh_warp, 0.0, 0.0) == (1.0, 1)
    D, eps = decode_K(cosh_warp, 0.7, -0.3)
    assert encode_K(cosh_warp, 0.7, D, eps) == pytest.approx(-0.3)


def test_scan_arrivals_over_a_small_grid(cosh_warp):
    K_values = np.concatenate([-np.linspace(0.9, 0.1, 9), [0.0], np.linspace(0.1, 0.9, 9)])
    scan = scan_arrivals(cosh_warp, 0.0, 1.0, 2, K_values=K_values, refine=0)
    assert scan.K.size == 19
    assert not scan.admissible[9]
    assert int(np.count_nonzero(scan.admissible)) == 18
    bands = scan.bands()
    assert bands
    assert all(0.0 < lo <= hi for lo, hi in bands)


def _log_tail_level(power):
    """1/f^2 = (tau (ln tau)^power)^-2 on (2, inf) through from_level."""
    def u(t):
        return t * np.log(t) ** power

    def du(t):
        return np.log(t) ** power + power * np.log(t) ** (power - 1)

    def ddu(t):
        return power * np.log(t) ** (power - 1) / t + power * (power - 1) * np.log(t) ** (power - 2) / t

    return from_level(lambda t: u(t) ** -2.0,
                      lambda t: -2.0 * u(t) ** -3.0 * du(t),
                      lambda t: 6.0 * u(t) ** -4.0 * du(t) ** 2 - 2.0 * u(t) ** -3.0 * ddu(t),
                      a=2.0, b=math.inf)


def test_power_tail_just_past_the_null_threshold_converges():
    # f ~ tau^1.01 makes the null integrand ~ tau^-1.01
    w = PowerQuadraticWarp(power=0.505)
    assert w.tail_exponent("b") == pytest.approx(-2.02)
    assert segment_integral(w, 0.0, math.inf, 0.0).is_finite
    assert segment_integral(w, 0.0, math.inf, -1.0).is_finite
    assert segment_integral(PowerQuadraticWarp(power=0.5), 0.0, math.inf, 0.0).is_divergent


def test_logarithmic_tails_use_shell_sums():
    slow = _log_tail_level(1.0)
    assert slow.tail_exponent("b") is None
    value = segment_integral(slow, 3.0, math.inf, 0.0)
    assert value.is_divergent
    assert value.reason == REASON_TAIL
    assert segment_integral(_log_tail_level(2.0), 3.0, math.inf, 0.0).is_finite
    # the time integrand grows like tau ln tau
    assert time_integral(_log_tail_level(2.0), 3.0, math.inf, 0.0).is_divergent
