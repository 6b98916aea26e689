"""Norm estimators and the stability, truncation and uniqueness harnesses."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import fmt, jsonable, write_csv
from .assumptions import SamplerConfig, check_growth, psi_from_report
from .generators import GeneratorSpec, PathContext, build_fn, scale_data, truncate_terminal
from .levy import PathEnsemble, TimeGrid, ValidationError, lnu_norm, standard_error
from .rho import RhoFunction
from .solver import BsdeSolution, SchemeConfig, TerminalCondition, solve_bsde

INACTIVE = "inactive"


# --- norms -------------------------------------------------------------------


def _root(mean: float, se: float, p: float) -> tuple[float, float]:
    """(A^(1/p), delta-method SE) for a mean A of non-negative samples."""
    val = mean ** (1.0 / p) if mean > 0 else 0.0
    d_se = (val / (p * mean)) * se if mean > 0 else 0.0
    return val, d_se


@dataclass
class NormReport:
    """Empirical solution norms with per-path samples of their p-th powers."""

    p: float
    sp: float
    lpw: float
    lpn: float
    i_f0: float
    se: dict
    samples: dict = field(repr=False, default_factory=dict)

    def row(self) -> tuple[float, float, float]:
        return self.sp, self.lpw, self.lpn

    def to_json(self) -> dict:
        return jsonable({"p": self.p, "sp": self.sp, "lpw": self.lpw, "lpn": self.lpn,
                         "i_f0": self.i_f0, "se": self.se})


def path_samples(Y, Z, U, dt, intensities, p: float) -> dict:
    """Per-path p-th powers: sup|Y|^p, (sum |Z|^2 dt)^(p/2), (sum ||U||^2 dt)^(p/2)."""
    M = Y.shape[0]
    sup = np.max(np.linalg.norm(Y, axis=2), axis=1) if Y.shape[1] else np.zeros(M)
    zq = (Z.reshape(M, Z.shape[1], -1) ** 2).sum(axis=2) if Z.size else np.zeros((M, len(dt)))
    uq = (lnu_norm(U, intensities, atom_axis=2) ** 2) if U.size else np.zeros((M, len(dt)))
    return {
        "sp": sup**p,
        "lpw": (zq @ dt) ** (p / 2),
        "lpn": (uq @ dt) ** (p / 2),
    }


def estimate_norms(sol: BsdeSolution, spec: GeneratorSpec | None = None, grid: TimeGrid | None = None,
                   p: float = 2.0) -> NormReport:
    """S^p, L^p(W), L^p(N~) and I_{|f0|} estimates by empirical means and Riemann sums."""
    if not p > 0:
        raise ValidationError(f"p must be > 0, got {p}")
    grid = sol.grid if grid is None else grid
    dt = grid.dt
    s = path_samples(sol.Y, sol.Z, sol.U, dt, sol.ensemble.model.intensities, p)
    if spec is not None:
        M = sol.M
        f0 = np.stack([
            np.linalg.norm(spec.f0_at(grid.nodes[i], PathContext(i, sol.ensemble.X[:, i]), M), axis=1)
            for i in range(grid.N)
        ], axis=1)
        s["i_f0"] = (f0 @ dt) ** p
    else:
        s["i_f0"] = np.zeros(sol.M)
    vals, ses = {}, {}
    for key, arr in s.items():
        vals[key], ses[key] = _root(float(arr.mean()), standard_error(arr), p)
    return NormReport(p, vals["sp"], vals["lpw"], vals["lpn"], vals["i_f0"], ses, s)


# --- Z, U controlled by Y ----------------------------------------------------


@dataclass
class ControlRatio:
    ratio: float
    numerator: float
    denominator: float
    zero_data: bool

    def to_json(self) -> dict:
        return jsonable(self.__dict__)


def zu_controlled_by_y(sol: BsdeSolution, spec: GeneratorSpec, grid: TimeGrid | None = None,
                       p: float = 2.0, norms: NormReport | None = None) -> ControlRatio:
    """(||Z||^p + ||U||^p) / (E sup|Y|^p + rho term + E I_{|f0|}^p), constants dropped.

    The rho term is E[rho(sup|Y|^2)^(p/2)] for p >= 2 and
    E[sum_i alpha(t_i) rho(|Y_i|^p) dt_i] for p < 2.  A vanishing
    denominator gives ratio 0 with ``zero_data`` set.
    """
    grid = sol.grid if grid is None else grid
    nr = estimate_norms(sol, spec, grid, p) if norms is None else norms
    num = float(nr.samples["lpw"].mean() + nr.samples["lpn"].mean())
    ynorm = np.linalg.norm(sol.Y, axis=2)
    if p >= 2:
        rho_term = float(np.mean(spec.rho(ynorm.max(axis=1) ** 2) ** (p / 2)))
    else:
        alpha = np.array([spec.alpha(t) for t in grid.nodes[:-1]])
        rho_term = float(np.mean(spec.rho(ynorm[:, :-1] ** p) @ (alpha * grid.dt)))
    den = float(nr.samples["sp"].mean()) + rho_term + float(nr.samples["i_f0"].mean())
    if den == 0.0:
        return ControlRatio(0.0 if num == 0 else math.inf, num, den, True)
    return ControlRatio(num / den, num, den, False)


# --- stability sweep ---------------------------------------------------------


def _terminal_values(xi, ensemble: PathEnsemble) -> np.ndarray:
    if isinstance(xi, TerminalCondition):
        return xi(ensemble)
    return np.asarray(xi, dtype=float).reshape(ensemble.M, ensemble.model.d)


def _map(fn, items, threads: int | None):
    threads = max(1, int(threads or 1))
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


@dataclass
class SweepReport:
    scales: list
    norms: list
    ratios: list
    row_verdicts: list
    monotone: bool
    zero_row_exact: bool
    ratio_bounded: bool
    slack_se: float

    @property
    def passed(self) -> bool:
        return self.monotone and self.zero_row_exact and self.ratio_bounded

    def to_json(self) -> dict:
        return jsonable({
            "scales": self.scales,
            "norms": [n.to_json() for n in self.norms],
            "ratios": [r.to_json() for r in self.ratios],
            "row_verdicts": self.row_verdicts,
            "monotone": self.monotone,
            "zero_row_exact": self.zero_row_exact,
            "ratio_bounded": self.ratio_bounded,
            "slack_se": self.slack_se,
            "pass": self.passed,
        })

    def write_csv(self, path) -> None:
        rows = [(fmt(e), *n.row(), v) for e, n, v in zip(self.scales, self.norms, self.row_verdicts)]
        write_csv(path, ("epsilon_or_n", "sp", "lpw", "lpn", "verdict"), rows)


def _nonincreasing(prev: dict, cur: dict, slack_se: float) -> bool:
    """cur <= prev for every norm column, up to slack_se paired standard errors of the p-th powers."""
    for key in ("sp", "lpw", "lpn"):
        diff = cur[key] - prev[key]
        if diff.mean() > slack_se * standard_error(diff):
            return False
    return True


def stability_sweep(spec: GeneratorSpec, xi, ensemble: PathEnsemble, grid: TimeGrid | None = None,
                    config: SchemeConfig = SchemeConfig(), scales=(1.0, 0.5, 0.25, 0.1, 0.0),
                    p: float | None = None, slack_se: float = 2.0, blowup_factor: float = 10.0,
                    threads: int | None = 1) -> SweepReport:
    """Solve with data (eps xi, eps f0) for each eps on one shared ensemble.

    Passes when each norm column is nonincreasing as eps decreases (paired
    slack of ``slack_se`` standard errors), any eps = 0 row is exactly zero,
    and the Z/U-to-Y ratio stays below ``blowup_factor`` times its value at
    the largest eps.
    """
    scales = [float(e) for e in scales]
    if any(b >= a for a, b in zip(scales[:-1], scales[1:])):
        raise ValidationError(f"scales must be strictly decreasing, got {scales}")
    p = spec.p if p is None else p
    grid = ensemble.grid if grid is None else grid
    xi_vals = _terminal_values(xi, ensemble)

    def run(eps):
        s = scale_data(spec, eps)
        sol = solve_bsde(s, eps * xi_vals, ensemble, grid, config)
        nr = estimate_norms(sol, s, grid, p)
        return nr, zu_controlled_by_y(sol, s, grid, p, nr)

    results = _map(run, scales, threads)
    norms = [r[0] for r in results]
    ratios = [r[1] for r in results]
    verdicts, monotone = [], True
    for m, (eps, nr) in enumerate(zip(scales, norms)):
        ok = m == 0 or _nonincreasing(norms[m - 1].samples, nr.samples, slack_se)
        monotone &= ok
        if eps == 0.0:
            verdicts.append("zero" if nr.row() == (0.0, 0.0, 0.0) else "nonzero")
        else:
            verdicts.append("ok" if ok else "increase")
    zero_exact = all(v == "zero" for e, v in zip(scales, verdicts) if e == 0.0)
    ref = ratios[0].ratio
    finite = [r.ratio for r in ratios if not r.zero_data]
    bounded = all(math.isfinite(x) for x in finite) and (
        ref == 0 or max(finite, default=0.0) <= blowup_factor * ref)
    return SweepReport(scales, norms, ratios, verdicts, bool(monotone), zero_exact, bool(bounded), slack_se)


# --- truncation convergence --------------------------------------------------


def solution_distance(a: BsdeSolution, b: BsdeSolution, p: float = 2.0) -> tuple[dict, dict]:
    """(S^p, L^p(W), L^p(N~)) norms of the difference of two solutions, with per-path samples."""
    s = path_samples(a.Y - b.Y, a.Z - b.Z, a.U - b.U, a.grid.dt, a.ensemble.model.intensities, p)
    vals = {k: _root(float(v.mean()), standard_error(v), p)[0] for k, v in s.items()}
    return vals, s


@dataclass
class ConvergenceTable:
    levels: list
    distances: list
    row_verdicts: list
    inactive_level: float
    monotone: bool
    inactive_exact: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.inactive_exact

    def to_json(self) -> dict:
        return jsonable({
            "levels": self.levels,
            "distances": self.distances,
            "row_verdicts": self.row_verdicts,
            "inactive_level": self.inactive_level,
            "monotone": self.monotone,
            "inactive_exact": self.inactive_exact,
            "pass": self.passed,
        })

    def write_csv(self, path) -> None:
        rows = [(fmt(n), d["sp"], d["lpw"], d["lpn"], v)
                for n, d, v in zip(self.levels, self.distances, self.row_verdicts)]
        write_csv(path, ("epsilon_or_n", "sp", "lpw", "lpn", "verdict"), rows)


def growth_bound(spec: GeneratorSpec, r: float, grid: TimeGrid, sampler: SamplerConfig | None = None):
    """psi_r as a function of t: the analytic bound when the generator has one, else a sampled estimate."""
    if spec.psi is not None:
        return spec.psi(r)
    cfg = sampler or SamplerConfig(n_samples=20_000)
    rep = check_growth(spec, r, cfg, times=grid.nodes)
    return psi_from_report(rep)


def inactive_level(reference: BsdeSolution, xi_vals: np.ndarray, psi, grid: TimeGrid) -> float:
    """Smallest level at which every truncation leaves the reference run untouched."""
    lam = reference.ensemble.model.intensities
    M, N = reference.M, grid.N
    candidates = [float(np.max(np.linalg.norm(xi_vals, axis=1))) if xi_vals.size else 0.0,
                  max(float(psi(t)) for t in grid.nodes)]
    if reference.Z.size:
        candidates.append(float(np.max(np.linalg.norm(reference.Z.reshape(M, N, -1), axis=2))))
    if reference.U.size:
        candidates.append(float(np.max(lnu_norm(reference.U, lam, atom_axis=2))))
    return max(1.0, *candidates)


def truncation_convergence_study(spec: GeneratorSpec, xi, ensemble: PathEnsemble,
                                 grid: TimeGrid | None = None, config: SchemeConfig = SchemeConfig(),
                                 levels=(1, 2, 4, 8, INACTIVE), r: float = 1.0, p: float | None = None,
                                 psi=None, slack_se: float = 0.0, threads: int | None = 1) -> ConvergenceTable:
    """Distances between the (f_n, c_n(xi)) solutions and the untruncated one.

    ``levels`` may contain ``"inactive"`` (or inf), replaced by the smallest
    level at which no truncation acts on the reference run; that row must be
    exactly zero.  ``psi`` is the growth bound at radius r + 1 (a function of
    t); it defaults to :func:`growth_bound`.
    """
    grid = ensemble.grid if grid is None else grid
    p = spec.p if p is None else p
    xi_vals = _terminal_values(xi, ensemble)
    psi = growth_bound(spec, r + 1.0, grid) if psi is None else psi
    reference = solve_bsde(spec, xi_vals, ensemble, grid, config)
    n_star = inactive_level(reference, xi_vals, psi, grid)
    explicit = [float(lv) for lv in levels if not (lv == INACTIVE or lv == math.inf)]
    # any level >= n_star is inactive; keep the table strictly increasing
    top = n_star if not explicit or n_star > explicit[-1] else 2.0 * explicit[-1]
    resolved = [top if (lv == INACTIVE or lv == math.inf) else float(lv) for lv in levels]
    if any(b <= a for a, b in zip(resolved[:-1], resolved[1:])):
        raise ValidationError(f"levels must be increasing, got {resolved}")

    def run(n):
        sol = solve_bsde(build_fn(spec, r, n, psi), truncate_terminal(xi_vals, n), ensemble, grid, config)
        return solution_distance(sol, reference, p)

    results = _map(run, resolved, threads)
    dists = [d for d, _ in results]
    verdicts, monotone = [], True
    for m, (n, (d, s)) in enumerate(zip(resolved, results)):
        ok = m == 0 or _nonincreasing(results[m - 1][1], s, slack_se)
        monotone &= ok
        verdicts.append("inactive" if n >= n_star else ("ok" if ok else "increase"))
    exact = all(tuple(d.values()) == (0.0, 0.0, 0.0) for n, d in zip(resolved, dists) if n >= n_star)
    return ConvergenceTable(resolved, dists, verdicts, n_star, bool(monotone), exact)


# --- uniform integrability ---------------------------------------------------


def uniform_integrability_check(rho: RhoFunction, p: float, xi_samples, K: int = 6,
                                threshold: float = 1e-3) -> dict:
    """Moments of V_n = xi / n for n = 1, 2, 4, ..., 2^K.

    Reports E|V_n|^p and E[rho(|V_n|^2)^(p/2)]; the verdict passes when both
    sequences are nonincreasing and end at or below ``threshold`` times their
    first value.
    """
    x = np.asarray(xi_samples, dtype=float)
    a = np.abs(x) if x.ndim == 1 else np.linalg.norm(x.reshape(x.shape[0], -1), axis=1)
    ns = [2**j for j in range(K + 1)]
    moment = [float(np.mean((a / n) ** p)) for n in ns]
    rho_moment = [float(np.mean(rho((a / n) ** 2) ** (p / 2))) for n in ns]

    def decays(seq):
        mono = all(b <= a_ for a_, b in zip(seq[:-1], seq[1:]))
        return mono and seq[-1] <= threshold * seq[0]

    return {
        "n": ns,
        "moment": moment,
        "rho_moment": rho_moment,
        "ratio_moment": moment[-1] / moment[0] if moment[0] else 0.0,
        "ratio_rho_moment": rho_moment[-1] / rho_moment[0] if rho_moment[0] else 0.0,
        "moment_pass": decays(moment),
        "rho_moment_pass": decays(rho_moment),
        "pass": decays(moment) and decays(rho_moment),
        "threshold": threshold,
    }


# --- uniqueness --------------------------------------------------------------


def uniqueness_perturbation(spec: GeneratorSpec, xi, ensemble: PathEnsemble, grid: TimeGrid | None = None,
                            config: SchemeConfig = SchemeConfig(), delta: float = 0.1,
                            seed: int = 0, factor: float = 10.0) -> dict:
    """Solve twice, the second time starting every implicit solve from fit + delta noise.

    With delta = 0 the two runs must be bit-identical; otherwise the
    largest |Y - Y'| must stay below ``factor`` times the implicit tolerance.
    """
    if not delta >= 0:
        raise ValidationError("delta must be >= 0")
    grid = ensemble.grid if grid is None else grid
    xi_vals = _terminal_values(xi, ensemble)
    a = solve_bsde(spec, xi_vals, ensemble, grid, config)
    b = solve_bsde(spec, xi_vals, ensemble, grid, config, init_perturbation=delta, perturbation_seed=seed)
    identical = all(np.array_equal(x, y) for x, y in ((a.Y, b.Y), (a.Z, b.Z), (a.U, b.U)))
    dy = float(np.max(np.abs(a.Y - b.Y))) if a.Y.size else 0.0
    bound = factor * config.implicit_tol
    ok = identical if delta == 0 else dy <= bound
    return {
        "delta": delta,
        "max_abs_dY": dy,
        "max_abs_dZ": float(np.max(np.abs(a.Z - b.Z))) if a.Z.size else 0.0,
        "max_abs_dU": float(np.max(np.abs(a.U - b.U))) if a.U.size else 0.0,
        "bit_identical": identical,
        "bound": 0.0 if delta == 0 else bound,
        "pass": bool(ok),
    }
