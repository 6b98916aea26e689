"""Pathwise ordering of solutions computed on common random numbers."""
import numpy as np
import pytest

from levy_bsde.assumptions import SamplerConfig
from levy_bsde.comparison import PreconditionError, compare_solutions, comparison_experiment
from levy_bsde.generators import make_generator, shift_generator
from levy_bsde.levy import LevyModel, TimeGrid, ValidationError, simulate_forward
from levy_bsde.solver import make_terminal, solve_bsde

SAMPLER = SamplerConfig(n_samples=5_000)


def test_reflexive_at_zero_tolerance(jump_ensemble):
    spec = make_generator("ylogy_osgood", jump_ensemble.model)
    sol = solve_bsde(spec, make_terminal("brownian"), jump_ensemble)
    rep = compare_solutions(sol, sol, tol=0.0)
    assert rep.passed and rep.max_gap == 0.0


def test_min_below_max(jump_ensemble):
    spec = make_generator("zero", jump_ensemble.model)
    lo = solve_bsde(spec, make_terminal("brownian_neg"), jump_ensemble)
    hi = solve_bsde(spec, make_terminal("brownian_pos"), jump_ensemble)
    assert compare_solutions(lo, hi).passed


def test_shifted_terminal_shifts_solution(jump_ensemble):
    spec = make_generator("zero", jump_ensemble.model)
    a = solve_bsde(spec, make_terminal("brownian"), jump_ensemble)
    b = solve_bsde(spec, make_terminal("brownian", shift=1.0), jump_ensemble)
    np.testing.assert_allclose(b.Y - a.Y, 1.0, rtol=0, atol=1e-12)


def test_antisymmetry(jump_ensemble):
    spec = make_generator("linear_drift", jump_ensemble.model)
    a = solve_bsde(spec, make_terminal("abs_brownian"), jump_ensemble)
    b = solve_bsde(spec, make_terminal("abs_brownian", shift=1e-9), jump_ensemble)
    tol = 1e-8
    ab, ba = compare_solutions(a, b, tol), compare_solutions(b, a, tol)
    assert ab.passed and ba.passed
    assert np.max(np.abs(a.Y - b.Y)) <= 2 * tol


def test_mismatched_ensembles(jump_model, jump_grid):
    spec = make_generator("zero", jump_model)
    e1 = simulate_forward(jump_model, jump_grid, 200, 1)
    e2 = simulate_forward(jump_model, jump_grid, 200, 2)
    with pytest.raises(ValidationError):
        compare_solutions(solve_bsde(spec, make_terminal("brownian"), e1),
                          solve_bsde(spec, make_terminal("brownian"), e2))


def test_unordered_terminals_abort(jump_model, jump_grid):
    spec = make_generator("zero", jump_model)
    with pytest.raises(PreconditionError) as info:
        comparison_experiment(spec, spec, make_terminal("brownian", shift=1.0), make_terminal("brownian"),
                              jump_model, jump_grid, 500, 1, sampler=SAMPLER)
    assert not info.value.report["terminal_order"]["pass"]


def test_unordered_generators_abort(jump_model, jump_grid):
    spec = make_generator("zero", jump_model)
    with pytest.raises(PreconditionError):
        comparison_experiment(shift_generator(spec, 1.0), spec, make_terminal("zero"), make_terminal("zero"),
                              jump_model, jump_grid, 500, 1, sampler=SAMPLER)


def test_posthoc_mode(jump_model, jump_grid):
    f = make_generator("ylogy_osgood", jump_model)
    rep = comparison_experiment(f, shift_generator(f, 0.5), make_terminal("abs_brownian"),
                                make_terminal("abs_brownian"), jump_model, jump_grid, 1000, 4,
                                sampler=SAMPLER, posthoc=True, threads=2)
    assert rep.meta["posthoc"]["pass"]
    assert rep.passed


def test_jump_ordering_counterexample_is_exercised():
    """f = -2 lambda u breaks the jump-ordering condition; Y' drifts below Y = 0."""
    model = LevyModel(1, 0, [0.0], None, [[1.0]], [1.0])
    grid = TimeGrid.uniform(1.0, 20)
    f = make_generator("jump_linear", model, weight=-2.0)
    xi, xi_p = make_terminal("zero"), make_terminal("jump_count")
    with pytest.raises(PreconditionError) as info:
        comparison_experiment(f, f, xi, xi_p, model, grid, 4000, 6, sampler=SAMPLER)
    assert not info.value.report["gamma"]["pass"]
    rep = comparison_experiment(f, f, xi, xi_p, model, grid, 4000, 6, preflight=False)
    assert not rep.passed
    _, sol_p = rep.solutions
    # closed form Y'_0 = -lambda T for this linear equation
    assert sol_p.Y[:, 0, 0].mean() == pytest.approx(-1.0, abs=0.2)


def test_report_csv(tmp_path, jump_model, jump_grid):
    f = make_generator("zero", jump_model)
    rep = comparison_experiment(f, f, make_terminal("brownian"), make_terminal("brownian"),
                                jump_model, jump_grid, 300, 2, tol=0.0, sampler=SAMPLER)
    rep.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,mean_Y,mean_Y_prime,mean_gap" and len(lines) == jump_grid.N + 2
    assert rep.to_json()["pass"] is True
