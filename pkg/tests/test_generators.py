"""Moduli rho, generator registry and the truncation constructions."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levy_bsde.generators import (
    REGISTRY,
    THETA_LIPSCHITZ,
    build_fn,
    build_hn,
    make_generator,
    project_ball,
    scale_data,
    shift_generator,
    theta_r,
    truncate_terminal,
)
from levy_bsde.levy import LevyModel, TimeGrid, ValidationError
from levy_bsde.rho import RhoFunction

vec = st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3).map(np.array)
LAM = np.array([0.5, 1.0, 2.0])


# --- rho ---------------------------------------------------------------------


@pytest.mark.parametrize("rho", [RhoFunction.linear(1), RhoFunction.linear(3.5),
                                 RhoFunction.log_osgood(1), RhoFunction.log_osgood(0.2)])
def test_rho_shape(rho):
    assert rho.check_shape() == {"zero_at_zero": True, "nondecreasing": True, "concave": True}


def test_log_osgood_values():
    rho = RhoFunction.log_osgood(1.0)
    assert rho(0.0) == 0.0
    assert float(rho(math.exp(-1))) == pytest.approx(2 * math.exp(-1))
    assert float(rho(5.0)) == 1.0
    assert rho.scalar(0.3) == pytest.approx(float(rho(0.3)), rel=1e-15)


def test_rho_round_trip_and_errors():
    for rho in (RhoFunction.linear(2.0), RhoFunction.log_osgood(0.5)):
        assert RhoFunction.from_dict(rho.to_dict()) == rho
    with pytest.raises(ValueError):
        RhoFunction("cubic")
    with pytest.raises(ValueError):
        RhoFunction.linear(0.0)


# --- theta_r, projections ----------------------------------------------------


def test_theta_examples():
    assert theta_r(np.array([1.0]), 2.0) == 1.0
    assert theta_r(np.array([4.0]), 2.0) == 0.0
    assert theta_r(np.array([2.5]), 2.0) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(0.1, 10))
def test_theta_monotone_and_lipschitz(a, b, r):
    ta, tb = float(theta_r(a, r, axis=None)), float(theta_r(b, r, axis=None))
    assert 0.0 <= ta <= 1.0
    if a <= b:
        assert ta >= tb
    assert abs(ta - tb) <= THETA_LIPSCHITZ * abs(a - b) + 1e-15


def test_project_ball_examples():
    np.testing.assert_allclose(project_ball([3.0, 4.0], 2.0), [1.2, 1.6], rtol=1e-15)
    v = np.array([0.3, -0.4])
    assert project_ball(v, 1.0) is not v and np.array_equal(project_ball(v, 1.0), v)
    assert np.array_equal(project_ball(np.zeros(3), 1.0), np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(0.1, 20), st.booleans())
def test_project_ball_idempotent_and_nonexpansive(v, w, n, weighted):
    lam = LAM if weighted else None
    norm = (lambda x: math.sqrt(float((LAM * x**2).sum()))) if weighted else (lambda x: float(np.linalg.norm(x)))
    pv, pw = project_ball(v, n, lam), project_ball(w, n, lam)
    assert norm(pv) <= n * (1 + 1e-12)
    np.testing.assert_allclose(project_ball(pv, n, lam), pv, rtol=1e-12, atol=1e-12)
    assert norm(pv - pw) <= norm(v - w) * (1 + 1e-12) + 1e-12


def test_truncate_terminal_examples():
    xi = np.array([[10.0], [-3.0], [0.0]])
    assert truncate_terminal(xi, 4.0)[:, 0].tolist() == [4.0, -3.0, 0.0]
    assert np.array_equal(truncate_terminal(np.zeros((5, 2)), 1.0), np.zeros((5, 2)))


# --- registry ----------------------------------------------------------------


def test_registry_contents():
    for gid in ("zero", "linear_drift", "ylogy_osgood", "showcase_simplified"):
        assert gid in REGISTRY
    with pytest.raises(ValidationError):
        make_generator("nope", LevyModel(1, 0, [0.0], None))
    with pytest.raises(ValidationError):
        make_generator("zero", LevyModel(1, 0, [0.0], None), bogus=1)


@pytest.mark.parametrize("gid", sorted(REGISTRY))
def test_zero_point_consistency(gid, jump_model, jump_grid):
    """eval(t, 0, 0, 0) equals f0(t) at sampled times."""
    params = {"c": 0.7} if gid in ("linear_drift", "ylogy_osgood", "showcase_simplified") else {}
    spec = make_generator(gid, jump_model, jump_grid, **params)
    y, z, u = spec.zeros(4)
    for t in np.linspace(0, 1, 9):
        np.testing.assert_array_equal(spec.eval(t, y, z, u), spec.f0_at(t, None, 4))


@pytest.mark.parametrize("p, branch", [(2.0, "A3>=2"), (3.0, "A3>=2"), (1.5, "A3<2")])
def test_branch_follows_p(p, branch, jump_model):
    assert make_generator("ylogy_osgood", jump_model, p=p).branch == branch


def test_p_below_two_needs_large_q(jump_model):
    with pytest.raises(ValidationError):
        make_generator("zero", jump_model, p=1.5, q=1.5)
    with pytest.raises(ValidationError):
        make_generator("zero", jump_model, p=1.0)


def test_showcase_rejects_vector_state():
    with pytest.raises(ValidationError):
        make_generator("showcase_simplified", LevyModel(2, 0, [0.0, 0.0], None))


def test_ylogy_value():
    spec = make_generator("ylogy_osgood", LevyModel(1, 0, [0.0], None))
    y = np.array([[math.e], [-2.0], [0.0]])
    z, u = np.zeros((3, 1, 0)), np.zeros((3, 0, 1))
    np.testing.assert_allclose(spec.eval(0.0, y, z, u)[:, 0], [-math.e, 2 * math.log(2), 0.0])


# --- truncations -------------------------------------------------------------


def _bzu_spec():
    model = LevyModel(1, 1, [0.0], [[1.0]], [[1.0]], [2.0])
    return make_generator("ylogy_osgood", model, b=1.0, c=0.25), model


def test_hn_examples():
    spec, _ = _bzu_spec()
    psi = spec.psi(3.0)
    h = build_hn(spec, 2.0, 100.0, psi)
    y0, z0, u0 = spec.zeros(1)
    assert h.eval(0.3, y0, z0, u0)[0, 0] == 0.25
    far = np.array([[3.5]])
    assert h.eval(0.3, far, np.array([[[1.0]]]), np.array([[[1.0]]]))[0, 0] == 0.25
    y, z, u = np.array([[1.5]]), np.array([[[0.4]]]), np.array([[[0.2]]])
    assert np.array_equal(h.eval(0.3, y, z, u), spec.eval(0.3, y, z, u))


def test_fn_examples():
    spec, _ = _bzu_spec()
    f = build_fn(spec, 1.0, 50.0, spec.psi(2.0))
    y, z, u = np.array([[7.0]]), np.array([[[0.4]]]), np.array([[[0.2]]])
    assert np.array_equal(f.eval(0.0, y, z, u), spec.eval(0.0, y, z, u))
    n = 3.0
    f3 = build_fn(spec, 1.0, n, 1e-9)
    big = np.array([[[2 * n]]])
    assert f3.eval(0.0, y, big, u)[0, 0] == spec.eval(0.0, y, big / 2, u)[0, 0]


def test_fn_of_constant_generator_is_constant():
    model = LevyModel(1, 1, [0.0], [[1.0]])
    spec = make_generator("linear_drift", model, kappa=0.0, c=1.5)
    f = build_fn(spec, 1.0, 0.5, 10.0)
    y = np.linspace(-5, 5, 11)[:, None]
    z = np.linspace(-9, 9, 11)[:, None, None]
    np.testing.assert_array_equal(f.eval(0.2, y, z, np.zeros((11, 0, 1))), 1.5)


def test_shift_and_scale():
    spec, _ = _bzu_spec()
    y, z, u = np.array([[0.7]]), np.array([[[0.1]]]), np.array([[[0.3]]])
    assert shift_generator(spec, 1.0).eval(0, y, z, u)[0, 0] == pytest.approx(spec.eval(0, y, z, u)[0, 0] + 1)
    s0 = scale_data(spec, 0.0)
    assert s0.f0_is_zero and s0.eval(0, *spec.zeros(1))[0, 0] == 0.0
    assert scale_data(spec, 1.0) is spec
