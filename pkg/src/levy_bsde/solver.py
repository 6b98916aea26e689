"""Backward Euler scheme for Lévy-driven BSDEs on a simulated path ensemble.

Each step regresses Y_{i+1}, Y_{i+1} dW_i and Y_{i+1} (counts - lambda dt)
on polynomials of X_{t_i} and then solves y = E_i[Y_{i+1}] + dt f(t_i, y, Z_i, U_i)
per path, implicitly in y with f evaluated at the left node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .generators import GeneratorSpec, PathContext
from .levy import PathEnsemble, TimeGrid, ValidationError
from .regression import RegressionError, Regressor

IMPLICIT_METHODS = ("fixed_point", "bisection")
ATOM_CUTOFF = 1e-14


class ImplicitSolveError(RuntimeError):
    def __init__(self, path: int, step: int, residual: float, detail: str = ""):
        self.path, self.step, self.residual = path, step, residual
        msg = f"implicit solve did not converge at step {step}, path {path}: residual {residual:.3e}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class StepError(RuntimeError):
    """A failure inside one backward step, annotated with the step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"backward step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class SchemeConfig:
    basis_degree: int = 2
    implicit_method: str = "fixed_point"
    damping: float = 1.0
    implicit_tol: float = 1e-12
    max_iter: int = 200
    ridge: float = 1e-10

    def __post_init__(self):
        if int(self.basis_degree) != self.basis_degree or self.basis_degree < 0:
            raise ValidationError(f"basis_degree must be a non-negative integer, got {self.basis_degree}")
        if self.implicit_method not in IMPLICIT_METHODS:
            raise ValidationError(f"implicit_method must be one of {IMPLICIT_METHODS}")
        if not 0 < self.damping <= 1:
            raise ValidationError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.implicit_tol > 0:
            raise ValidationError("implicit_tol must be > 0")
        if int(self.max_iter) < 1:
            raise ValidationError("max_iter must be >= 1")
        if not self.ridge >= 0:
            raise ValidationError("ridge must be >= 0")


# --- terminal conditions -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class TerminalCondition:
    """A map from the simulated ensemble to per-path terminal values (M, d)."""

    name: str
    func: Callable[[PathEnsemble], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, ens: PathEnsemble) -> np.ndarray:
        out = np.asarray(self.func(ens), dtype=float)
        out = np.broadcast_to(out.reshape(ens.M, -1), (ens.M, ens.model.d)).copy()
        if not np.all(np.isfinite(out)):
            raise ValidationError(f"terminal condition {self.name!r} is not finite on every path")
        return out


def _terminal_brownian(ens: PathEnsemble) -> np.ndarray:
    if ens.model.k == 0:
        raise ValidationError("Brownian terminal conditions need k >= 1")
    WT = ens.W[:, -1]
    d = ens.model.d
    return WT[:, :d] if ens.model.k >= d else np.repeat(WT[:, :1], d, axis=1)


def make_terminal(term_id: str, scale: float = 1.0, shift: float = 0.0, value: float = 0.0) -> TerminalCondition:
    """Terminal conditions addressed by id, as scale * base + shift."""

    bases = {
        "zero": lambda e: np.zeros((e.M, e.model.d)),
        "constant": lambda e: np.full((e.M, e.model.d), float(value)),
        "state": lambda e: e.X[:, -1],
        "brownian": _terminal_brownian,
        "abs_brownian": lambda e: np.abs(_terminal_brownian(e)),
        "brownian_neg": lambda e: np.minimum(_terminal_brownian(e), 0.0),
        "brownian_pos": lambda e: np.maximum(_terminal_brownian(e), 0.0),
        "jump_count": lambda e: e.counts.sum(axis=(1, 2)).astype(float)[:, None],
    }
    if term_id not in bases:
        raise ValidationError(f"unknown terminal id {term_id!r}; known: {sorted(bases)}")
    base = bases[term_id]

    def func(e):
        v = base(e)
        if scale != 1.0:
            v = scale * v
        if shift != 0.0:
            v = v + shift
        return v

    return TerminalCondition(term_id, func, {"scale": scale, "shift": shift, "value": value})


TERMINALS = ("abs_brownian", "brownian", "brownian_neg", "brownian_pos", "constant", "jump_count",
             "state", "zero")


# --- solution ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """Discrete (Y, Z, U): Y (M, N+1, d), Z (M, N, d, k), U (M, N, J, d)."""

    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    grid: TimeGrid
    ensemble: PathEnsemble
    spec_name: str
    diagnostics: dict

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    def write_csv(self, path) -> None:
        """Dump as ``path,step,field,index,value``: all Y rows, then Z, then U.

        Rows are ordered by path, step and flattened (row-major) index.
        """
        M, N1, _ = self.Y.shape
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("path,step,field,index,value\n")
            for name, arr in (("Y", self.Y), ("Z", self.Z), ("U", self.U)):
                flat = arr.reshape(M, arr.shape[1], -1)
                if flat.size == 0:
                    continue
                m, i, c = (x.ravel().tolist() for x in np.indices(flat.shape))
                vals = map(repr, flat.ravel().tolist())
                fh.write("".join(f"{a},{b},{name},{d},{v}\n" for a, b, d, v in zip(m, i, c, vals)))

    def diagnostics_json(self) -> dict:
        return {"generator": self.spec_name, "M": self.M, "N": self.grid.N, **self.diagnostics}


# --- implicit solve ----------------------------------------------------------


def _scale(E: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.linalg.norm(E, axis=1))


def _bisect(g, E: np.ndarray, tol: float, max_iter: int):
    """Bracketed bisection for the scalar root of g(rows, y) = 0, per row.

    Returns (root, iterations, residual).  g must be increasing in y.
    """
    n = E.shape[0]
    rows = np.arange(n)
    sc = _scale(E)
    lo = E[:, 0] - sc
    hi = E[:, 0] + sc
    glo = g(rows, lo[:, None])[:, 0]
    ghi = g(rows, hi[:, None])[:, 0]
    for _ in range(200):
        bad_lo, bad_hi = glo > 0, ghi < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = hi - lo
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
        if bad_lo.any():
            glo[bad_lo] = g(rows[bad_lo], lo[bad_lo, None])[:, 0]
        if bad_hi.any():
            ghi[bad_hi] = g(rows[bad_hi], hi[bad_hi, None])[:, 0]
    unbracketed = (glo > 0) | (ghi < 0) | ~np.isfinite(glo) | ~np.isfinite(ghi)
    mid = 0.5 * (lo + hi)
    gm = g(rows, mid[:, None])[:, 0]
    resolved = np.zeros(n, bool)
    it = 0
    for it in range(1, max(max_iter, 1100) + 1):
        done = (np.abs(gm) <= tol * sc) | (hi - lo <= tol * sc) | unbracketed | resolved
        if done.all():
            break
        act = ~done
        lo = np.where(act & (gm < 0), mid, lo)
        hi = np.where(act & (gm >= 0), mid, hi)
        new_mid = 0.5 * (lo + hi)
        # floating point cannot split the bracket any further: the root is resolved
        resolved |= act & (new_mid == mid)
        mid = np.where(act, new_mid, mid)
        upd = act & ~resolved
        if upd.any():
            gm[upd] = g(rows[upd], mid[upd, None])[:, 0]
    return mid[:, None], it, gm, unbracketed


def implicit_solve(f_rows, E: np.ndarray, dt: float, cfg: SchemeConfig, step: int,
                   y0: np.ndarray | None = None):
    """Solve y = E + dt f(y) per path.  ``f_rows(rows, y)`` evaluates f on a subset of paths.

    Returns (y, info) where info counts iterations and bisection fallbacks.
    """
    M, d = E.shape
    tol = cfg.implicit_tol
    sc = _scale(E)
    all_rows = np.arange(M)

    def resid(rows, y):
        return y - E[rows] - dt * f_rows(rows, y)

    info = {"iterations": 0, "bisection_paths": 0, "max_residual": 0.0}
    if cfg.implicit_method == "bisection":
        if d != 1:
            raise ValidationError("bisection is only available for d = 1")
        y, it, gm, unb = _bisect(resid, E, tol, cfg.max_iter)
        info["iterations"] = it
        info["bisection_paths"] = M
        _check(y, gm[:, None], unb, sc, tol, step, info)
        return y, info

    y = E.copy() if y0 is None else np.array(y0, dtype=float)
    r = resid(all_rows, y)
    rn = np.linalg.norm(r, axis=1)
    active = ~(rn <= tol * sc)
    theta = np.full(M, float(cfg.damping))
    it = 0
    while active.any() and it < cfg.max_iter:
        it += 1
        rows = np.flatnonzero(active)
        y_new = y[rows] - theta[rows, None] * r[rows]
        r_new = resid(rows, y_new)
        rn_new = np.linalg.norm(r_new, axis=1)
        improved = rn_new < rn[rows]
        if d > 1:
            # halve the damping on paths whose residual did not contract
            acc = improved | ~np.isfinite(rn[rows])
            theta[rows[~acc]] *= 0.5
        else:
            acc = np.ones(rows.size, bool)
        upd = rows[acc]
        y[upd] = y_new[acc]
        r[upd] = r_new[acc]
        rn[upd] = rn_new[acc]
        active[rows] = ~(rn[rows] <= tol * sc[rows])
        if d == 1 and it >= 8:
            # stalled scalar paths (no contraction over the last sweep) go to bisection
            stalled = rows[~improved & active[rows]]
            if stalled.size:
                active[stalled] = False
                _fallback(stalled, y, r, rn, E, dt, f_rows, cfg, step, info, sc)
    info["iterations"] = it
    left = np.flatnonzero(active)
    if left.size:
        if d == 1:
            _fallback(left, y, r, rn, E, dt, f_rows, cfg, step, info, sc)
        else:
            w = left[int(np.argmax(rn[left]))]
            raise ImplicitSolveError(int(w), step, float(rn[w]), "damped fixed point")
    bad = ~np.isfinite(y).all(axis=1)
    if bad.any():
        w = int(np.flatnonzero(bad)[0])
        raise ImplicitSolveError(w, step, float("nan"), "non-finite iterate")
    info["max_residual"] = max(info["max_residual"], float(np.max(rn / sc)) if M else 0.0)
    return y, info


def _fallback(rows, y, r, rn, E, dt, f_rows, cfg, step, info, sc):
    def g(sub, yy):
        idx = rows[sub]
        return yy - E[idx] - dt * f_rows(idx, yy)

    yb, _, gm, unb = _bisect(g, E[rows], cfg.implicit_tol, cfg.max_iter)
    _check(yb, gm[:, None], unb, sc[rows], cfg.implicit_tol, step, info, rows)
    y[rows] = yb
    r[rows] = gm[:, None]
    rn[rows] = np.abs(gm)
    info["bisection_paths"] += int(rows.size)


def _check(y, g, unbracketed, sc, tol, step, info, rows=None):
    if unbracketed.any():
        w = int(np.flatnonzero(unbracketed)[0])
        path = int(rows[w]) if rows is not None else w
        raise ImplicitSolveError(path, step, float(np.abs(g[w]).max()), "no sign change found")
    info["max_residual"] = max(info["max_residual"], float(np.max(np.abs(g[:, 0]) / sc)) if y.size else 0.0)


# --- scheme ------------------------------------------------------------------


def backward_step(Y_next: np.ndarray, ens: PathEnsemble, i: int, spec: GeneratorSpec,
                  cfg: SchemeConfig, start_offset: np.ndarray | None = None):
    """One step of the scheme: returns (Y_i, Z_i, U_i, diagnostics).

    The implicit solve starts from the regression fit E_i[Y_next], shifted by
    ``start_offset`` when one is given.
    """
    M, d = Y_next.shape
    k, lam = ens.model.k, ens.model.intensities
    J = lam.size
    dt = float(ens.grid.dt[i])
    t = float(ens.grid.nodes[i])
    X = ens.X[:, i]
    reg = Regressor(X, cfg.basis_degree, cfg.ridge)
    lam_dt = lam * dt
    live = lam_dt >= ATOM_CUTOFF
    cols = [Y_next]
    if k:
        cols.append((Y_next[:, :, None] * ens.dW[:, i][:, None, :]).reshape(M, d * k))
    comp = ens.counts[:, i] - lam_dt[None]
    if live.any():
        cols.append((comp[:, live][:, :, None] * Y_next[:, None, :]).reshape(M, -1))
    rhs = np.concatenate(cols, axis=1)
    _, fitted, se = reg.fit(rhs)
    E = fitted[:, :d]
    Z = (fitted[:, d:d + d * k] / dt).reshape(M, d, k) if k else np.zeros((M, d, 0))
    U = np.zeros((M, J, d))
    if live.any():
        U[:, live] = fitted[:, d + d * k:].reshape(M, int(live.sum()), d) / lam_dt[live][None, :, None]

    def f_rows(rows, y):
        ctx = PathContext(step=i, X=X[rows])
        return spec.eval(t, y, Z[rows], U[rows], ctx)

    if not spec.y_dependent:
        Y = E + dt * f_rows(np.arange(M), E)
        info = {"iterations": 0, "bisection_paths": 0, "max_residual": 0.0}
    else:
        y0 = None if start_offset is None else E + start_offset
        Y, info = implicit_solve(f_rows, E, dt, cfg, i, y0)
    info.update({"condition": reg.condition, "fit_se": float(se[:d].max()) if d else 0.0})
    return Y, Z, U, info


def solve_bsde(spec: GeneratorSpec, xi, ensemble: PathEnsemble, grid: TimeGrid | None = None,
               config: SchemeConfig = SchemeConfig(), init_perturbation: float = 0.0,
               perturbation_seed: int = 0) -> BsdeSolution:
    """Run the backward scheme from the terminal layer xi down to t_0.

    ``xi`` is a TerminalCondition or an array of per-path terminal values.
    With ``init_perturbation`` > 0 each implicit solve starts from the
    regression fit plus Gaussian noise of that size instead of from the fit.
    """
    grid = ensemble.grid if grid is None else grid
    if grid.N != ensemble.grid.N or not np.array_equal(grid.nodes, ensemble.grid.nodes):
        raise ValidationError("ensemble was simulated on a different grid")
    spec.check_matches(ensemble.model)
    M, N, d = ensemble.M, grid.N, ensemble.model.d
    xi_vals = xi(ensemble) if isinstance(xi, TerminalCondition) else np.asarray(xi, dtype=float)
    xi_vals = xi_vals.reshape(M, d) if xi_vals.size == M * d else None
    if xi_vals is None:
        raise ValidationError("terminal values do not match the ensemble shape")
    if not np.all(np.isfinite(xi_vals)):
        raise ValidationError("terminal values must be finite")
    if not init_perturbation >= 0:
        raise ValidationError("init_perturbation must be >= 0")
    k, J = ensemble.model.k, ensemble.model.n_atoms
    Y = np.empty((M, N + 1, d))
    Z = np.zeros((M, N, d, k))
    U = np.zeros((M, N, J, d))
    Y[:, N] = xi_vals
    diag = {key: np.zeros(N) for key in ("iterations", "bisection_paths", "max_residual", "condition", "fit_se")}
    noise = None
    if init_perturbation > 0:
        noise = rng.normals(perturbation_seed, np.arange(M, dtype=np.uint64), N, rng.PERTURBATION, d)
    for i in range(N - 1, -1, -1):
        offset = None if noise is None else init_perturbation * noise[:, i]
        try:
            Yi, Zi, Ui, info = backward_step(Y[:, i + 1], ensemble, i, spec, config, offset)
        except (ImplicitSolveError, RegressionError) as exc:
            raise StepError(i, exc) from exc
        Y[:, i], Z[:, i], U[:, i] = Yi, Zi, Ui
        for key in diag:
            diag[key][i] = info[key]
    for arr in (Y, Z, U):
        arr.setflags(write=False)
    diag = {key: v.tolist() for key, v in diag.items()}
    return BsdeSolution(Y, Z, U, grid, ensemble, spec.name, diag)
