"""Pathwise ordering of scalar BSDE solutions driven by common random numbers."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import jsonable, write_csv
from .assumptions import SamplerConfig, check_gamma
from .generators import GeneratorSpec, PathContext
from .levy import LevyModel, TimeGrid, ValidationError, simulate_forward
from .solver import BsdeSolution, SchemeConfig, TerminalCondition, solve_bsde


class PreconditionError(RuntimeError):
    """The ordering hypotheses failed before any solve was attempted."""

    def __init__(self, report: dict):
        failed = [k for k, v in report.items() if isinstance(v, dict) and not v.get("pass", True)]
        super().__init__(f"comparison preconditions failed: {', '.join(failed)}")
        self.report = report


@dataclass
class ComparisonReport:
    violations: int
    points: int
    max_excess: float
    max_gap: float
    tolerance: list
    node_t: list
    mean_y: list
    mean_y_prime: list
    meta: dict = field(default_factory=dict)
    solutions: tuple | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        return jsonable({
            "violations": self.violations,
            "points": self.points,
            "max_excess": self.max_excess,
            "max_gap": self.max_gap,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "meta": self.meta,
        })

    def write_csv(self, path) -> None:
        rows = [(t, a, b, b - a) for t, a, b in zip(self.node_t, self.mean_y, self.mean_y_prime)]
        write_csv(path, ("t", "mean_Y", "mean_Y_prime", "mean_gap"), rows)


def default_tolerance(sol: BsdeSolution, sol_prime: BsdeSolution, n_se: float = 3.0) -> np.ndarray:
    """Per-node tolerance: n_se times the larger regression standard error; 0 at t_N."""
    a = np.asarray(sol.diagnostics["fit_se"], dtype=float)
    b = np.asarray(sol_prime.diagnostics["fit_se"], dtype=float)
    return np.append(n_se * np.maximum(a, b), 0.0)


def compare_solutions(sol: BsdeSolution, sol_prime: BsdeSolution, tol=None) -> ComparisonReport:
    """Count grid points and paths with Y > Y' + tol.

    ``tol`` is a scalar, a per-node array of length N+1, or None for
    :func:`default_tolerance`.
    """
    if sol.Y.shape != sol_prime.Y.shape or not np.array_equal(sol.grid.nodes, sol_prime.grid.nodes):
        raise ValidationError("solutions live on different grids or path counts")
    ea, eb = sol.ensemble, sol_prime.ensemble
    if ea is not eb and not (ea.seed == eb.seed and np.array_equal(ea.X, eb.X)):
        raise ValidationError("solutions were not computed on a common ensemble")
    if sol.Y.shape[2] != 1:
        raise ValidationError("pathwise comparison is defined for d = 1 only")
    N1 = sol.Y.shape[1]
    tol_arr = default_tolerance(sol, sol_prime) if tol is None else np.broadcast_to(
        np.asarray(tol, dtype=float), (N1,))
    gap = sol.Y[:, :, 0] - sol_prime.Y[:, :, 0]
    excess = gap - tol_arr[None, :]
    return ComparisonReport(
        violations=int(np.count_nonzero(excess > 0)),
        points=int(gap.size),
        max_excess=float(max(0.0, excess.max())),
        max_gap=float(gap.max()),
        tolerance=np.asarray(tol_arr).tolist(),
        node_t=sol.grid.nodes.tolist(),
        mean_y=sol.Y[:, :, 0].mean(axis=0).tolist(),
        mean_y_prime=sol_prime.Y[:, :, 0].mean(axis=0).tolist(),
        meta={"generator": sol.spec_name, "generator_prime": sol_prime.spec_name,
              "seed": ea.seed, "M": sol.M, "N": N1 - 1},
    )


def generator_order(spec: GeneratorSpec, spec_prime: GeneratorSpec, cfg: SamplerConfig,
                    tolerance: float = 1e-12) -> dict:
    """Sampled check of f(t, y, z, u) <= f'(t, y, z, u)."""
    rng = np.random.default_rng(cfg.seed)
    n = int(cfg.n_samples)
    y = rng.uniform(-cfg.y_bound, cfg.y_bound, (n, 1))
    z = rng.uniform(-cfg.z_bound, cfg.z_bound, (n, 1, spec.k))
    u = rng.uniform(-cfg.u_bound, cfg.u_bound, (n, spec.n_atoms, 1))
    worst = -np.inf
    for t in cfg.times():
        diff = spec.eval(t, y, z, u)[:, 0] - spec_prime.eval(t, y, z, u)[:, 0]
        worst = max(worst, float(diff.max()))
    return {"max_excess": worst, "samples": n * cfg.n_times, "pass": worst <= tolerance}


def posthoc_order(spec: GeneratorSpec, spec_prime: GeneratorSpec, sol_prime: BsdeSolution,
                  tolerance: float = 1e-12) -> dict:
    """Evaluate f and f' along the primed solution and count f > f' + tolerance."""
    grid, ens = sol_prime.grid, sol_prime.ensemble
    count, worst = 0, -np.inf
    for i in range(grid.N):
        ctx = PathContext(i, ens.X[:, i])
        args = (grid.nodes[i], sol_prime.Y[:, i], sol_prime.Z[:, i], sol_prime.U[:, i], ctx)
        diff = spec.eval(*args)[:, 0] - spec_prime.eval(*args)[:, 0]
        count += int(np.count_nonzero(diff > tolerance))
        worst = max(worst, float(diff.max()))
    return {"violations": count, "max_excess": worst, "pass": count == 0}


def comparison_experiment(spec: GeneratorSpec, spec_prime: GeneratorSpec, xi, xi_prime,
                          model: LevyModel, grid: TimeGrid, M: int, seed: int,
                          config: SchemeConfig = SchemeConfig(), tol=None,
                          sampler: SamplerConfig | None = None, preflight: bool = True,
                          posthoc: bool = False, threads: int | None = 1) -> ComparisonReport:
    """Solve (xi, f) and (xi', f') on one shared ensemble and compare pathwise.

    The preflight checks the jump-ordering condition for f (or, failing
    that, for f'), xi <= xi' on every path and f <= f' on samples; a failure
    raises :class:`PreconditionError` carrying the preflight report.
    ``preflight=False`` skips it, which is how known counterexamples are run.
    """
    if model.d != 1:
        raise ValidationError("comparison experiments need d = 1")
    ens = simulate_forward(model, grid, M, seed, threads)
    xv = xi(ens) if isinstance(xi, TerminalCondition) else np.asarray(xi, float).reshape(M, 1)
    xpv = xi_prime(ens) if isinstance(xi_prime, TerminalCondition) else np.asarray(xi_prime, float).reshape(M, 1)
    pre = {}
    if preflight:
        cfg = sampler or SamplerConfig(n_samples=20_000)
        g = check_gamma(spec, cfg)
        g_prime = check_gamma(spec_prime, cfg) if not g.passed else g
        pre["gamma"] = {"pass": g.passed or g_prime.passed, "max_violation": g.max_violation,
                        "max_violation_prime": g_prime.max_violation}
        gap = float(np.max(xv - xpv))
        pre["terminal_order"] = {"pass": gap <= 0.0, "max_excess": gap}
        pre["generator_order"] = generator_order(spec, spec_prime, cfg)
        if not all(v["pass"] for v in pre.values()):
            raise PreconditionError(pre)
    if threads and int(threads) > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fa = pool.submit(solve_bsde, spec, xv, ens, grid, config)
            fb = pool.submit(solve_bsde, spec_prime, xpv, ens, grid, config)
            sol, sol_p = fa.result(), fb.result()
    else:
        sol = solve_bsde(spec, xv, ens, grid, config)
        sol_p = solve_bsde(spec_prime, xpv, ens, grid, config)
    rep = compare_solutions(sol, sol_p, tol)
    rep.meta["preflight"] = pre if preflight else "skipped"
    if posthoc:
        rep.meta["posthoc"] = posthoc_order(spec, spec_prime, sol_p)
    rep.solutions = (sol, sol_p)
    return rep
