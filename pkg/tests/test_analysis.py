"""Norm estimators and the stability, truncation, integrability and uniqueness harnesses."""
import math

import numpy as np
import pytest

from levy_bsde.analysis import (
    estimate_norms,
    stability_sweep,
    truncation_convergence_study,
    uniform_integrability_check,
    uniqueness_perturbation,
    zu_controlled_by_y,
)
from levy_bsde.generators import make_generator
from levy_bsde.levy import LevyModel, TimeGrid, simulate_forward
from levy_bsde.rho import RhoFunction
from levy_bsde.solver import BsdeSolution, SchemeConfig, make_terminal, solve_bsde


def _constant_solution(y=0.0, z=0.0, u=0.0):
    model = LevyModel(1, 1, [0.0], [[1.0]], [[1.0]], [2.0])
    grid = TimeGrid.uniform(1.0, 10)
    ens = simulate_forward(model, grid, 8, 0)
    Y = np.full((8, 11, 1), y)
    Z = np.full((8, 10, 1, 1), z)
    U = np.full((8, 10, 1, 1), u)
    return BsdeSolution(Y, Z, U, grid, ens, "const", {})


@pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
def test_norm_examples(p):
    assert estimate_norms(_constant_solution(y=2.0), p=p).sp == pytest.approx(2.0, rel=1e-15)
    assert estimate_norms(_constant_solution(z=1.0), p=2).lpw == pytest.approx(1.0, rel=1e-15)
    assert estimate_norms(_constant_solution(u=3.0), p=2).lpn == pytest.approx(math.sqrt(18), rel=1e-15)


def test_zero_data_ratio():
    sol = _constant_solution()
    spec = make_generator("zero", sol.ensemble.model)
    r = zu_controlled_by_y(sol, spec)
    assert r.zero_data and r.ratio == 0.0


def test_ratio_is_homogeneous(bm_ensemble):
    spec = make_generator("zero", bm_ensemble.model)
    a = solve_bsde(spec, make_terminal("brownian"), bm_ensemble)
    b = solve_bsde(spec, make_terminal("brownian", scale=2.0), bm_ensemble)
    ra, rb = zu_controlled_by_y(a, spec, p=2), zu_controlled_by_y(b, spec, p=2)
    assert math.isfinite(ra.ratio)
    # rho = linear(1) is homogeneous, so every term picks up the same factor 4
    assert rb.ratio == pytest.approx(ra.ratio, rel=1e-12)


def test_sweep_linearity(bm_ensemble):
    spec = make_generator("zero", bm_ensemble.model)
    rep = stability_sweep(spec, make_terminal("brownian"), bm_ensemble, scales=(1.0, 0.5, 0.0))
    assert rep.passed
    assert rep.norms[1].samples["sp"].mean() == pytest.approx(0.25 * rep.norms[0].samples["sp"].mean(),
                                                              rel=1e-12)
    assert rep.norms[1].sp == pytest.approx(0.5 * rep.norms[0].sp, rel=1e-12)
    assert rep.norms[2].row() == (0.0, 0.0, 0.0)


def test_sweep_rejects_unordered_scales(bm_ensemble):
    spec = make_generator("zero", bm_ensemble.model)
    with pytest.raises(ValueError):
        stability_sweep(spec, make_terminal("brownian"), bm_ensemble, scales=(0.5, 1.0))


def test_truncation_of_martingale_matches_direct_differencing(bm_ensemble):
    spec = make_generator("zero", bm_ensemble.model)
    tab = truncation_convergence_study(spec, make_terminal("brownian"), bm_ensemble, levels=(1, 2, 4, 8))
    WT = bm_ensemble.W[:, -1]
    ref = solve_bsde(spec, WT, bm_ensemble)
    for n, dist in zip(tab.levels, tab.distances):
        clipped = solve_bsde(spec, np.clip(WT, -n, n), bm_ensemble)
        direct = math.sqrt(np.mean(np.max(np.abs(clipped.Y - ref.Y)[:, :, 0], axis=1) ** 2))
        assert dist["sp"] == pytest.approx(direct, rel=1e-12, abs=1e-300)
    sp = [d["sp"] for d in tab.distances]
    assert all(b <= a for a, b in zip(sp, sp[1:])) and sp[0] > 0


def test_truncation_of_zero_data(jump_ensemble):
    spec = make_generator("ylogy_osgood", jump_ensemble.model)
    tab = truncation_convergence_study(spec, make_terminal("zero"), jump_ensemble, levels=(1, 2, "inactive"))
    assert tab.passed
    assert all(tuple(d.values()) == (0.0, 0.0, 0.0) for d in tab.distances)


def test_uniform_integrability_examples(rng):
    zero = uniform_integrability_check(RhoFunction.log_osgood(), 2, np.zeros(100))
    assert zero["moment"] == [0.0] * 7 and zero["rho_moment"] == [0.0] * 7
    x = rng.normal(size=10_000)
    lin = uniform_integrability_check(RhoFunction.linear(1), 2, x)
    e = np.mean(x**2)
    for n, m in zip(lin["n"], lin["rho_moment"]):
        assert m == pytest.approx(e / n**2, rel=1e-12)
    log = uniform_integrability_check(RhoFunction.log_osgood(1), 2, x)
    seq = log["rho_moment"]
    assert all(b < a for a, b in zip(seq, seq[1:]))


def test_uniqueness_examples(jump_ensemble):
    spec = make_generator("ylogy_osgood", jump_ensemble.model)
    xi = make_terminal("brownian")
    same = uniqueness_perturbation(spec, xi, jump_ensemble, delta=0.0)
    assert same["bit_identical"] and same["pass"]
    zero = uniqueness_perturbation(make_generator("zero", jump_ensemble.model), xi, jump_ensemble, delta=0.3)
    assert zero["bit_identical"]
    pert = uniqueness_perturbation(spec, xi, jump_ensemble, delta=0.1)
    assert pert["pass"] and pert["max_abs_dY"] <= 10 * SchemeConfig().implicit_tol
