"""Backward Bihari and Gronwall bounds, Young's bound and the Osgood test."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levy_bsde.inequalities import (
    G,
    G_inv,
    InequalityViolation,
    bihari_bound,
    equality_case,
    gronwall_bound,
    osgood_divergence,
    young_bound,
)
from levy_bsde.levy import TimeGrid, ValidationError
from levy_bsde.rho import RhoFunction

# log-Osgood rho, c = 0.1, K = 1, T = 1: 40-digit adaptive quadrature of 1/rho and a secant root
BIHARI_LOG_OSGOOD = 0.80657922072805805761
# 8/3 + 3^1.5 / 1.5; minimizing the bound over R gives 6 = ab, so R = 1 is not tight
YOUNG_2_3 = 6.130768281804421


def _grid(N=50, T=1.0):
    return TimeGrid.uniform(T, N)


def test_bihari_linear_is_exponential():
    b = bihari_bound(1.0, 1.0, RhoFunction.linear(1), _grid())
    assert b.bound[0] == pytest.approx(math.e, abs=1e-6)
    assert b.bound[-1] == 1.0
    assert np.all(np.diff(b.bound) <= 0)


def test_bihari_zero_K_is_constant():
    b = bihari_bound(0.7, 0.0, RhoFunction.log_osgood(), _grid())
    assert np.all(b.bound == 0.7)


def test_bihari_log_osgood_oracle():
    b = bihari_bound(0.1, 1.0, RhoFunction.log_osgood(1), _grid())
    assert b.bound[0] == pytest.approx(BIHARI_LOG_OSGOOD, abs=1e-6)


def test_bihari_zero_start():
    b = bihari_bound(0.0, 2.0, RhoFunction.log_osgood(), _grid())
    assert np.all(b.bound == 0.0) and b.in_domain.all()


def test_bihari_rejects_bad_input():
    with pytest.raises(ValidationError):
        bihari_bound(-1.0, 1.0, RhoFunction.linear(), _grid())
    with pytest.raises(ValidationError):
        bihari_bound(1.0, -1.0, RhoFunction.linear(), _grid())


def test_out_of_domain_is_flagged():
    b = bihari_bound(1.0, 1000.0, RhoFunction.linear(1), _grid())
    assert not b.in_domain[0] and math.isinf(b.bound[0])
    assert b.in_domain[-1]


def test_G_and_inverse():
    rho = RhoFunction.log_osgood(1)
    assert G(rho, 1.0) == 0.0
    # antiderivative of 1/(x (1 - log x)) is -log(1 - log x)
    assert G(rho, 0.01) == pytest.approx(-math.log(1 - math.log(0.01)), rel=1e-10)
    for x in (1e-5, 0.3, 4.0):
        assert G_inv(rho, G(rho, x)) == pytest.approx(x, rel=1e-9)


def test_gronwall_examples():
    g = gronwall_bound(2.0, 0.5, TimeGrid.uniform(2.0, 40))
    assert g[0] == pytest.approx(2 * math.e, rel=1e-12)
    assert np.all(gronwall_bound(0.0, 3.0, _grid()) == 0.0)
    assert gronwall_bound(1.0, 1.0, _grid())[0] == pytest.approx(math.e, rel=1e-12)


def test_equality_case_is_dominated():
    grid = _grid(200)
    K = 1.0 + 0.5 * np.sin(grid.nodes)
    for rho in (RhoFunction.linear(1), RhoFunction.log_osgood(1)):
        y = equality_case(0.2, K, rho, grid)
        b = bihari_bound(0.2, K, rho, grid)
        assert np.all(y <= b.bound + 1e-8)


def test_young_examples():
    assert young_bound(1, 1, 2, 2) == (1, 1)
    prod, bound = young_bound(0, 2.0, 3, 1.5, 0.5)
    assert prod == 0 and bound >= 0
    prod, bound = young_bound(2, 3, 3, 1.5, 1)
    assert prod == 6 and bound == pytest.approx(YOUNG_2_3, rel=1e-15)
    with pytest.raises(ValidationError):
        young_bound(1, 1, 2, 3)


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1.01, 20), st.floats(1e-3, 1e3))
def test_young_never_violated(a, b, p, R):
    q = p / (p - 1)
    try:
        prod, bound = young_bound(a, b, p, q, R)
    except InequalityViolation:  # pragma: no cover - would be a real failure
        pytest.fail(f"Young violated at {(a, b, p, R)}")
    except ValidationError:
        return  # conjugacy rounding at the 1e-12 gate
    assert prod <= bound * (1 + 1e-12)


def test_osgood_linear_partials():
    r1 = osgood_divergence(RhoFunction.linear(1), 1.0, 6)
    np.testing.assert_allclose(r1["partials"], [m * math.log(10) for m in range(1, 7)], rtol=1e-10)
    assert r1["verdict"] == "diverging" and r1["growth"] == "linear"
    r2 = osgood_divergence(RhoFunction.linear(2), 1.0, 6)
    np.testing.assert_allclose(r2["partials"], np.array(r1["partials"]) / 2, rtol=1e-12)


def test_osgood_log_partials():
    r = osgood_divergence(RhoFunction.log_osgood(1), 1.0, 8)
    oracle = [math.log(1 + m * math.log(10)) for m in range(1, 9)]
    np.testing.assert_allclose(r["partials"], oracle, rtol=0, atol=1e-8)
    assert r["verdict"] == "diverging" and r["growth"] == "sublinear"


def test_osgood_detects_convergent_integral():
    class Sqrt:
        osgood = False

        def __call__(self, x):
            return np.sqrt(x)

    assert osgood_divergence(Sqrt(), 1.0, 8)["verdict"] == "converging"
