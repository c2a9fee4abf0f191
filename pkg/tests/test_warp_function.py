import math

import numpy as np
import pytest

from grw_errors import ConfigError, DomainError
from solver_settings import SolverSettings
from warp_function import (EndOscillationWarp, LogStaircaseWarp, PolynomialWarp, PowerQuadraticWarp, TabulatedWarp,
                           TrigPolynomialWarp, from_level, make_warp, warp_from_config)


def test_level_function_of_cosh(cosh_warp):
    taus = np.linspace(-3.0, 3.0, 13)
    p, dp, ddp = cosh_warp.level_derivs(taus)
    np.testing.assert_allclose(p, 1.0 / np.cosh(taus) ** 2, rtol=1e-13)
    np.testing.assert_allclose(dp, -2.0 * np.tanh(taus) / np.cosh(taus) ** 2, rtol=1e-12, atol=1e-15)
    h = 1e-5
    numeric = (cosh_warp.level(taus + h) - 2.0 * cosh_warp.level(taus) + cosh_warp.level(taus - h)) / h ** 2
    np.testing.assert_allclose(ddp, numeric, atol=1e-5)


def test_level_form_gives_f(linear_level_warp):
    f, fp, fpp = linear_level_warp.eval(0.5)
    assert f == pytest.approx(math.sqrt(2.0))
    # f = (1 - tau)^(-1/2)
    assert fp == pytest.approx(0.5 * 0.5 ** -1.5)
    assert fpp == pytest.approx(0.75 * 0.5 ** -2.5)


def test_check_point_outside_interval(concave_warp):
    with pytest.raises(DomainError):
        concave_warp.check_point(1.5)
    with pytest.raises(DomainError):
        concave_warp.eval(-1.0)


def test_extreme_profile_cosh(cosh_warp):
    for end in ("a", "b"):
        prof = cosh_warp.extreme_profile(end)
        assert prof.lim_f == math.inf
        assert prof.m_end == 0.0
        assert prof.is_relative_min
        assert prof.method == "closed_form"


def test_extreme_profile_extendible_end(concave_warp):
    prof = concave_warp.extreme_profile("b")
    assert prof.lim_f == pytest.approx(0.5)
    assert prof.lim_fprime == pytest.approx(-1.0)
    assert prof.m_end == pytest.approx(4.0)
    # 1/f^2 grows towards b, so b is not a relative minimum
    assert not prof.is_relative_min


def test_infima_de_sitter(cosh_warp):
    m, m_r, m_l = cosh_warp.infima(0.0)
    assert m == 0.0
    assert m_r == 0.0
    assert m_l == 0.0


def test_interior_minimum_trig():
    w = TrigPolynomialWarp(offset=2.0, cos=[0.5])
    # f peaks at 2.5 where cos = 1
    assert w.interior_minimum == pytest.approx(1.0 / 2.5 ** 2, rel=1e-8)
    assert w.extreme_profile("b").lim_f is None


def test_tail_exponents(cosh_warp, flat_warp, concave_warp):
    assert cosh_warp.tail_exponent("b") == -math.inf
    assert flat_warp.tail_exponent("a") == 0.0
    assert PolynomialWarp([1.0, 0.0, 1.0]).tail_exponent("b") == -4.0
    assert PowerQuadraticWarp(power=0.505).tail_exponent("a") == pytest.approx(-2.02)
    # tends to the offset
    assert PowerQuadraticWarp(power=-0.5, offset=1.0).tail_exponent("b") == 0.0
    assert concave_warp.tail_exponent("b") is None
    assert from_level(lambda t: 1.0 + t * t, lambda t: 2.0 * t, lambda t: 2.0 + 0.0 * t).tail_exponent("b") is None


def test_minima_of_concave_warp(concave_warp):
    assert concave_warp.interior_minimum == pytest.approx(1.0, abs=1e-12)
    assert concave_warp.global_infimum == pytest.approx(1.0, abs=1e-12)
    minima = concave_warp._local_minima(-0.5, 0.5)
    assert len(minima) == 1
    assert minima[0][0] == pytest.approx(0.0, abs=1e-6)
    assert minima[0][1] == pytest.approx(1.0, abs=1e-12)


def test_window_points(cosh_warp, concave_warp):
    settings = SolverSettings(window_M=7.0)
    assert cosh_warp.window_point("b", settings) == 7.0
    assert cosh_warp.window_point("a", settings) == -7.0
    assert concave_warp.window_point("b") == pytest.approx(1.0 - 0.02)
    assert concave_warp.window_point("a") == pytest.approx(-1.0 + 0.02)


def test_restrict(concave_warp):
    strip = concave_warp.restrict(-0.5, 0.5)
    assert strip.interval == (-0.5, 0.5)
    assert strip.eval(0.2) == pytest.approx(concave_warp.eval(0.2))
    with pytest.raises(DomainError):
        concave_warp.restrict(-2.0, 0.5)


def test_from_level_callables():
    w = from_level(lambda t: 1.0 + t * t, lambda t: 2.0 * t, lambda t: 2.0 + 0.0 * t)
    f, fp, _ = w.eval(1.0)
    assert f == pytest.approx(2.0 ** -0.5)
    assert fp == pytest.approx(-0.5 * 2.0 ** -1.5 * 2.0)
    with pytest.raises(DomainError):
        from_level(lambda t: -1.0 + 0.0 * t, lambda t: 0.0 * t, lambda t: 0.0 * t)


def test_staircase_is_monotone_with_flat_steps():
    w = LogStaircaseWarp(shift=0.5)
    taus = np.linspace(0.01, 0.999, 2000)
    p = w.level(taus)
    assert np.all(np.diff(p) <= 1e-12)
    # flat at X = 2^-n
    for n in range(1, 6):
        assert abs(float(w.level_prime(1.0 - 2.0 ** -n))) < 1e-12
    assert w.extreme_profile("b").m_end == 0.5


def test_staircase_extended_join_is_c2():
    w = LogStaircaseWarp(shift=2.0, extended=True)
    assert w.a == -0.5
    left = [float(v) for v in w.level_derivs(-1e-9)]
    right = [float(v) for v in w.level_derivs(1e-9)]
    assert left[0] == pytest.approx(right[0], rel=1e-6)
    with pytest.raises(DomainError):
        LogStaircaseWarp(shift=0.0, extended=True)


def test_end_oscillation_has_no_slope_limit():
    w = EndOscillationWarp(offset=1.0, amplitude=0.1, power=2.0, omega=1.0)
    prof = w.extreme_profile("b")
    assert prof.lim_f == 1.0
    assert prof.lim_fprime is None


def test_power_quadratic_limits():
    w = PowerQuadraticWarp(power=0.25)
    prof = w.extreme_profile("b")
    assert prof.lim_f == math.inf
    assert prof.lim_fprime == 0.0


def test_tabulated_from_csv(tmp_path):
    taus = np.linspace(0.0, 1.0, 11)
    path = tmp_path / "warp.csv"
    np.savetxt(path, np.column_stack([taus, 1.0 + taus]), delimiter=",", header="tau,f")
    w = TabulatedWarp.from_csv(str(path))
    assert w.interval == (0.0, 1.0)
    assert w.eval(0.45)[0] == pytest.approx(1.45, rel=1e-10)
    with pytest.raises(DomainError):
        TabulatedWarp([0.0, 1.0, 0.5, 2.0], [1.0, 1.0, 1.0, 1.0])


def test_make_warp_from_config():
    w = warp_from_config({"family": "polynomial", "interval": [-1, 1], "params": {"coeffs": [1.0, 0.0, -0.5]},
                          "strip": [-0.5, "0.5"]})
    assert w.interval == (-0.5, 0.5)
    w = make_warp("cosh", {"amplitude": 2.0}, ["-inf", "inf"])
    assert w.a == -math.inf and w.b == math.inf
    with pytest.raises(ConfigError):
        make_warp("bessel")
    with pytest.raises(ConfigError):
        make_warp("cosh", {"width": 1.0})
