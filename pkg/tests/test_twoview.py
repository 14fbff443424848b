import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nearscale.errors import DegenerateBaseline, DegenerateMotion, InputError, NoSolution
from nearscale.twoview import TwoViewConfig, solve_two_view_scale, two_view_intensity


def roots_for(lam, z, t, b, rho=math.pi):
    I1, I2 = two_view_intensity(lam, z, t, b, rho)
    return solve_two_view_scale(TwoViewConfig(b, z, t, I1, I2))


def test_forward_generated_root():
    r = roots_for(2.0, 0.01, 0.005, 0.003)
    assert any(abs(x / 2.0 - 1) < 1e-9 for x in r)


def test_zero_baseline():
    with pytest.raises(DegenerateBaseline):
        solve_two_view_scale(TwoViewConfig(0.0, 0.01, 0.005, 0.5, 0.3))


def test_identical_viewpoints():
    with pytest.raises(DegenerateMotion):
        solve_two_view_scale(TwoViewConfig(0.003, 0.01, 0.0, 0.5, 0.5))


def test_inconsistent_intensities():
    # moving the camera away from the light cannot brighten an on-axis point this much
    with pytest.raises(NoSolution):
        solve_two_view_scale(TwoViewConfig(0.003, 0.01, 0.002, 0.1, 100.0))


@pytest.mark.parametrize("kwargs", [dict(z=0.0), dict(I1=0.0), dict(I2=-1.0)])
def test_config_validation(kwargs):
    base = dict(b=0.003, z=0.01, t=0.002, I1=0.5, I2=0.4)
    base.update(kwargs)
    with pytest.raises(InputError):
        TwoViewConfig(**base)


def test_unit_configuration():
    I1, I2 = two_view_intensity(1.0, 1.0, 0.0, 0.0, math.pi)
    assert I1 == I2 == 1.0


def test_zero_baseline_limit():
    lam, z, rho = 3.0, 0.4, 2.0
    I1, _ = two_view_intensity(lam, z, 0.0, 0.0, rho)
    assert abs(I1 - rho / (math.pi * (lam * z) ** 2)) < 1e-12 * I1


def test_two_roots_ascending():
    r = roots_for(2.0, 0.01, 0.002, 0.003)
    assert len(r) == 2 and r[0] < r[1]
    assert abs(r[1] - 2.0) < 2e-9
    # the quadratic oracle: both roots satisfy the equation
    I1, I2 = two_view_intensity(2.0, 0.01, 0.002, 0.003, 1.0)
    c = (I2 / I1) ** (2 / 3)
    for lam in r:
        lhs = 0.003 ** 2 + (lam * 0.01) ** 2
        rhs = c * ((lam * 0.002 + 0.003) ** 2 + (lam * 0.01) ** 2)
        assert abs(lhs - rhs) < 1e-12 * lhs


def test_linear_case():
    # c = z^2 / (z^2 + t^2) makes the quadratic coefficient vanish
    z, t, b = 0.01, 0.004, 0.003
    c = z * z / (z * z + t * t)
    I2 = c ** 1.5
    r = solve_two_view_scale(TwoViewConfig(b, z, t, 1.0, I2))
    lin = -(1 - c) * b * b / (-2 * c * t * b)
    assert len(r) == 1 and abs(r[0] - lin) < 1e-12 * lin


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 10), st.floats(1e-3, 3e-2), st.floats(-1e-2, 1e-2).filter(lambda t: abs(t) > 1e-5),
       st.floats(1e-3, 5e-3), st.floats(0.1, 10))
def test_round_trip_property(lam, z, t, b, alpha):
    r = roots_for(lam, z, t, b)
    assert 1 <= len(r) <= 2
    assert min(abs(x / lam - 1) for x in r) < 1e-9
    # gauge: (z, t) -> alpha (z, t) maps roots to roots / alpha
    I1, I2 = two_view_intensity(lam, z, t, b, math.pi)
    scaled = solve_two_view_scale(TwoViewConfig(b, alpha * z, alpha * t, I1, I2))
    np.testing.assert_allclose(sorted(x * alpha for x in scaled), r, rtol=1e-8)
