import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtce.catalog import (
    CatalogError,
    Exponential,
    Linear,
    PiecewiseLinear,
    Power,
    from_dict,
    integrate,
    lipschitz_bound,
)
from scipy.integrate import quad

FUNCS = [
    Linear(-1.5),
    Power(0.7, 2.0),
    Power(1.3, 1.5),
    Exponential(1.0, -0.5),
    Exponential(-1.0, 1.0),
    PiecewiseLinear((-1.0, 0.0, 2.0), (1.0, 0.0, 3.0)),
]


@pytest.mark.parametrize("fn", FUNCS, ids=lambda f: type(f).__name__)
def test_integral_matches_quadrature(fn):
    for lo, hi in [(-2.0, 1.0), (0.3, 0.7), (-0.5, -0.1)]:
        ref, _ = quad(lambda x: float(fn(x)), lo, hi, points=[0.0] if lo < 0 < hi else None)
        assert integrate(fn, lo, hi) == pytest.approx(ref, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("fn", FUNCS, ids=lambda f: type(f).__name__)
def test_derivative_matches_central_difference(fn):
    x = np.array([-1.7, -0.4, 0.35, 1.2])
    h = 1e-6
    num = (fn(x + h) - fn(x - h)) / (2 * h)
    assert np.allclose(fn.derivative(x), num, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("fn", FUNCS, ids=lambda f: type(f).__name__)
def test_dict_round_trip(fn):
    again = from_dict(fn.to_dict())
    x = np.linspace(-2, 2, 9)
    assert np.array_equal(again(x), fn(x))
    assert again == fn


def test_catalog_rejects_bad_specs():
    with pytest.raises(CatalogError):
        Power(1.0, 1.0)
    with pytest.raises(CatalogError):
        Exponential(1.0, 0.0)
    with pytest.raises(CatalogError):
        from_dict({"type": "cubic"})
    with pytest.raises(CatalogError):
        from_dict({"type": "linear"})


def test_integrate_reversed_bounds_is_negative():
    f = Power(1.0, 2.0)
    assert integrate(f, 1.0, 0.0) == pytest.approx(-1.0 / 3.0)


def test_lipschitz_bound_linear_and_power():
    assert lipschitz_bound(Linear(-2.0), -1, 1) == pytest.approx(2.0)
    # |d/dx x^2| on [-1, 3] peaks at 6
    assert lipschitz_bound(Power(1.0, 2.0), -1, 3) == pytest.approx(6.0, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.1, 3.0), p=st.floats(1.1, 3.0), lo=st.floats(-3, 0), width=st.floats(0.01, 3))
def test_power_integral_property(a, p, lo, width):
    f = Power(a, p)
    hi = lo + width
    ref, _ = quad(lambda x: float(f(x)), lo, hi, points=[0.0] if lo < 0 < hi else None, epsabs=1e-13, epsrel=1e-12)
    assert math.isclose(integrate(f, lo, hi), ref, rel_tol=1e-8, abs_tol=1e-11)
