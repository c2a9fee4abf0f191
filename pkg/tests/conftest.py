import numpy as np
import pytest

from fiber_geometry import Circle, RealLine, RoundSphere
from solver_settings import SolverSettings
from warp_function import ConstantWarp, CoshWarp, LevelPolynomialWarp, PolynomialWarp


@pytest.fixture
def cosh_warp():
    """de Sitter warp f = cosh(tau) on the real line"""
    return CoshWarp()


@pytest.fixture
def flat_warp():
    return ConstantWarp(1.0)


@pytest.fixture
def linear_level_warp():
    """1/f^2 = 1 - tau on (0, 1)"""
    return LevelPolynomialWarp([1.0, -1.0], a=0.0, b=1.0)


@pytest.fixture
def concave_warp():
    """f = 1 - tau^2/2 on (-1, 1), f'' = -1"""
    return PolynomialWarp([1.0, 0.0, -0.5], a=-1.0, b=1.0)


@pytest.fixture
def sphere():
    return RoundSphere(dim=2, radius=1.0)


@pytest.fixture
def line():
    return RealLine()


@pytest.fixture
def circle():
    return Circle(radius=1.0)


@pytest.fixture
def settings():
    return SolverSettings()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
