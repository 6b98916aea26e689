"""Sampled audits of the structural conditions on generators and moduli."""
import math

import numpy as np
import pytest

from levy_bsde.assumptions import (
    SamplerConfig,
    UnsupportedDimensionError,
    check_consistency,
    check_gamma,
    check_growth,
    check_monotonicity,
    check_rho_bounds,
)
from levy_bsde.generators import make_generator
from levy_bsde.levy import LevyModel
from levy_bsde.rho import RhoFunction

SMALL = SamplerConfig(n_samples=20_000, seed=1)


def _model(k=1, atoms=True):
    if atoms:
        return LevyModel(1, k, [0.0], [[1.0]] if k else None, [[1.0], [-0.5]], [1.0, 2.0])
    return LevyModel(1, k, [0.0], [[1.0]] if k else None)


def test_ylogy_dense_grid_oracle():
    """Independent scan of (y - y')(f(y) - f(y')) - rho(|y - y'|^2) - |y - y'|^2 on [-10, 10]^2."""
    g = np.linspace(-10, 10, 2001)
    y, y2 = np.meshgrid(g, g, indexing="ij")

    def f(v):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(v == 0, 0.0, -v * np.log(np.abs(v)))

    def rho(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x <= 0, 0.0, np.where(x < 1, x * (1 - np.log(x)), 1.0))

    d = y - y2
    excess = d * (f(y) - f(y2)) - rho(d**2) - d**2
    assert excess.max() <= 1e-12


@pytest.mark.parametrize("gid", ["zero", "linear_drift", "ylogy_osgood"])
def test_monotonicity_holds_for_declared_coefficients(gid):
    spec = make_generator(gid, _model())
    rep = check_monotonicity(spec, SMALL)
    assert rep.passed, rep.to_json()
    assert rep.assumption == "A3>=2"


def test_monotonicity_p_below_two_branch():
    spec = make_generator("ylogy_osgood", _model(), p=1.5, q=2.0)
    rep = check_monotonicity(spec, SMALL)
    assert rep.assumption == "A3<2"
    assert rep.passed, rep.to_json()


def test_y_squared_is_caught():
    spec = make_generator("y_squared", _model(), mu=1.0)
    rep = check_monotonicity(spec, SMALL)
    assert not rep.passed
    y, y2 = rep.worst_point["y"][0], rep.worst_point["y_prime"][0]
    dy = y - y2
    assert dy * (y**2 - y2**2) - dy**2 == pytest.approx(rep.max_violation, rel=1e-9)
    z, u = np.zeros((1, 1, 1)), np.zeros((1, 2, 1))
    lhs = 3.0 * (spec.eval(0, np.array([[3.0]]), z, u) - spec.eval(0, np.array([[0.0]]), z, u))[0, 0]
    assert (lhs, spec.mu(0) * 9.0) == (27.0, 9.0)


def test_monotonicity_is_seeded():
    spec = make_generator("ylogy_osgood", _model())
    a = check_monotonicity(spec, SMALL)
    b = check_monotonicity(spec, SMALL)
    assert a.max_violation == b.max_violation and a.worst_point == b.worst_point


def test_consistency_report():
    rep = check_consistency(make_generator("linear_drift", _model(), c=2.0), np.linspace(0, 1, 5))
    assert rep.passed and rep.assumption == "A1"


def test_growth_examples():
    m = _model()
    lin = check_growth(make_generator("linear_drift", m), 2.0, SMALL, psi=lambda t: 2.0)
    assert lin.passed and max(lin.details["psi"]) <= 2.0
    zero = check_growth(make_generator("zero", m), 2.0, SMALL)
    assert max(zero.details["psi"]) == 0.0
    for r in (0.2, 1.0, 3.0):
        env = max(r * math.log(r), math.exp(-1)) if r > math.exp(-1) else r * abs(math.log(r))
        rep = check_growth(make_generator("ylogy_osgood", m, b=1.0), r, SMALL, psi=lambda t, e=env: e)
        assert rep.passed, (r, rep.max_violation)


def test_gamma_examples():
    m = LevyModel(1, 0, [0.0], None, [[1.0]], [1.0])
    assert check_gamma(make_generator("zero", m), SMALL).passed
    assert check_gamma(make_generator("jump_linear", m, weight=1.0), SMALL).passed
    rep = check_gamma(make_generator("jump_linear", m, weight=2.0), SMALL,
                      pairs=[((0.0,), (1.0,)), ((1.0,), (0.0,))])
    assert rep.passed and rep.details["rejected"] == 1
    assert rep.max_violation == pytest.approx(-2.0 - 1.0)
    assert not check_gamma(make_generator("jump_linear", m, weight=-2.0), SMALL).passed


def test_gamma_needs_scalar_state():
    m = LevyModel(2, 0, [0.0, 0.0], None)
    with pytest.raises(UnsupportedDimensionError):
        check_gamma(make_generator("zero", m))


def test_rho_bounds_examples():
    lin = check_rho_bounds(RhoFunction.linear(1), 2.0)
    assert lin.passed
    for rho in (RhoFunction.linear(2), RhoFunction.log_osgood(1)):
        for p in (1.5, 2.0, 3.0):
            rep = check_rho_bounds(rho, p, grid=[1.0])
            assert rep.worst_point["lhs"] == pytest.approx(float(rho(1.0)))
            assert rep.worst_point["rhs"] == pytest.approx(2 * float(rho(1.0)))


def test_rho_bounds_fine_grid_log_osgood():
    """Fine-grid oracle for p = 3 evaluated without the package's rho."""
    y = np.logspace(-6, 3, 200_001)

    def rho(x):
        return np.where(x < 1, x * (1 - np.log(np.minimum(x, 1))), 1.0)

    excess = (rho(y**2) * y - rho(y**3) - y**3) / np.maximum(1, rho(y**3) + y**3)
    assert excess.max() <= 0
    assert check_rho_bounds(RhoFunction.log_osgood(1), 3.0, grid=y).passed
