"""Sampling-based auditing of the generator assumptions.

Every checker evaluates a signed violation LHS - RHS on random samples and
reports the worst one.  A pass means no violation above the tolerance was
found; it is falsification evidence, not a proof.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._io import jsonable
from .generators import GeneratorSpec
from .levy import ValidationError, lnu_norm
from .rho import RhoFunction


class EvaluationError(RuntimeError):
    """The generator returned a non-finite value at a sample point."""


class UnsupportedDimensionError(ValidationError):
    pass


@dataclass
class AssumptionReport:
    assumption: str
    samples: int
    max_violation: float
    worst_point: dict
    tolerance: float
    seed: int | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tolerance)

    def to_json(self) -> dict:
        return jsonable(
            {
                "assumption": self.assumption,
                "samples": self.samples,
                "max_violation": self.max_violation,
                "worst_point": self.worst_point,
                "pass": self.passed,
                "seed": self.seed,
                "tolerance": self.tolerance,
                "details": self.details,
            }
        )


@dataclass(frozen=True)
class SamplerConfig:
    """Sample ranges for the checkers.

    A third of the pairs are uniform in the balls of the given radii, a third
    are near-diagonal (y' close to y, z' close to z, u' close to u) and a third
    sit near the origin on log-uniform scales.  Times are drawn from
    ``n_times`` equally spaced values in ``t_range``.
    """

    n_samples: int = 100_000
    seed: int = 0
    t_range: tuple = (0.0, 1.0)
    n_times: int = 32
    y_bound: float = 10.0
    z_bound: float = 10.0
    u_bound: float = 10.0

    def times(self) -> np.ndarray:
        lo, hi = self.t_range
        return np.linspace(lo, hi, self.n_times)


def _ball(rng: np.random.Generator, n: int, shape: tuple, radius: float) -> np.ndarray:
    """n points uniform in the Euclidean ball (over all of ``shape``) of the given radius."""
    dim = int(np.prod(shape)) if shape else 1
    if dim == 0:
        return np.zeros((n,) + shape)
    g = rng.standard_normal((n, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    rad = radius * rng.random(n) ** (1.0 / dim)
    return (g * rad[:, None]).reshape((n,) + shape)


def _near(rng, base: np.ndarray, radius: float) -> np.ndarray:
    """Perturb ``base`` by log-uniform scales between 1e-9 and 1e-1 of ``radius``."""
    n = base.shape[0]
    shape = base.shape[1:]
    scale = radius * 10.0 ** rng.uniform(-9, -1, n)
    dim = int(np.prod(shape)) if shape else 1
    if dim == 0:
        return base.copy()
    g = rng.standard_normal((n, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return base + (g * scale[:, None]).reshape(base.shape)


def _small(rng, n: int, shape: tuple, radius: float) -> np.ndarray:
    pts = _ball(rng, n, shape, 1.0)
    dim = int(np.prod(shape)) if shape else 1
    if dim == 0:
        return pts
    nrm = np.linalg.norm(pts.reshape(n, -1), axis=1)
    target = radius * 10.0 ** rng.uniform(-8, 0, n)
    fac = target / np.maximum(nrm, 1e-300)
    return pts * fac.reshape((n,) + (1,) * len(shape))


def _clip_norm(v: np.ndarray, radius: float) -> np.ndarray:
    n = v.shape[0]
    if v.size == 0:
        return v
    nrm = np.linalg.norm(v.reshape(n, -1), axis=1)
    fac = np.minimum(1.0, radius / np.maximum(nrm, 1e-300))
    return v * fac.reshape((n,) + (1,) * (v.ndim - 1))


def draw_pairs(spec: GeneratorSpec, cfg: SamplerConfig):
    """Sample (t, y, y', z, z', u, u') with the three-way mix described on SamplerConfig."""
    rng = np.random.default_rng(cfg.seed)
    n = int(cfg.n_samples)
    ys, zs, us = (spec.d,), (spec.d, spec.k), (spec.n_atoms, spec.d)
    n1, n2 = n // 3, n // 3
    n3 = n - n1 - n2

    def block(shape, radius):
        a1, b1 = _ball(rng, n1, shape, radius), _ball(rng, n1, shape, radius)
        a2 = _ball(rng, n2, shape, radius)
        b2 = _clip_norm(_near(rng, a2, radius), radius)
        a3, b3 = _small(rng, n3, shape, radius), _small(rng, n3, shape, radius)
        return np.concatenate([a1, a2, a3]), np.concatenate([b1, b2, b3])

    y, y2 = block(ys, cfg.y_bound)
    z, z2 = block(zs, cfg.z_bound)
    u, u2 = block(us, cfg.u_bound)
    t_idx = rng.integers(0, cfg.n_times, n)
    return cfg.times(), t_idx, y, y2, z, z2, u, u2


def _eval_checked(spec: GeneratorSpec, t, y, z, u, idx) -> np.ndarray:
    out = spec.eval(t, y, z, u)
    bad = ~np.all(np.isfinite(out), axis=1)
    if np.any(bad):
        b = int(np.flatnonzero(bad)[0])
        raise EvaluationError(
            f"generator {spec.name!r} returned {out[b].tolist()} at sample {int(idx[b])}: "
            f"t={t}, y={y[b].tolist()}, z={z[b].tolist()}, u={u[b].tolist()}"
        )
    return out


def _point(**kw) -> dict:
    return {k: (np.asarray(v).tolist()) for k, v in kw.items()}


def _finalize(name, violations, points_fn, n, tol, seed, details=None) -> AssumptionReport:
    if n == 0 or violations.size == 0:
        return AssumptionReport(name, 0, -math.inf, {}, tol, seed, details or {})
    w = int(np.argmax(violations))
    return AssumptionReport(name, int(n), float(violations[w]), points_fn(w), tol, seed, details or {})


def check_monotonicity(spec: GeneratorSpec, cfg: SamplerConfig = SamplerConfig(),
                       tolerance: float = 1e-9) -> AssumptionReport:
    """Audit the one-sided (Osgood) monotonicity condition of the branch matching spec.p."""
    times, t_idx, y, y2, z, z2, u, u2 = draw_pairs(spec, cfg)
    p = spec.p
    viol = np.full(y.shape[0], -np.inf)
    lam = spec.intensities
    for ti, t in enumerate(times):
        sel = np.flatnonzero(t_idx == ti)
        if not sel.size:
            continue
        dy = y[sel] - y2[sel]
        ady = np.linalg.norm(dy, axis=1)
        if p < 2:
            keep = ady > 0
            sel, dy, ady = sel[keep], dy[keep], ady[keep]
            if not sel.size:
                continue
        f1 = _eval_checked(spec, t, y[sel], z[sel], u[sel], sel)
        f2 = _eval_checked(spec, t, y2[sel], z2[sel], u2[sel], sel)
        inner = np.einsum("md,md->m", dy, f1 - f2)
        dz = np.linalg.norm((z[sel] - z2[sel]).reshape(sel.size, -1), axis=1)
        du = lnu_norm(u[sel] - u2[sel], lam, atom_axis=1) if lam.size else np.zeros(sel.size)
        a, m = spec.alpha(t), spec.mu(t)
        if p >= 2:
            w = ady ** (p - 2)
            lhs = w * inner
            rhs = a * w * spec.rho(ady**2) + m * ady**p + spec.beta(t) * ady ** (p - 1) * (dz + du)
        else:
            lhs = ady ** (p - 2) * inner
            rhs = (a * spec.rho(ady**p) + m * ady**p
                   + ady ** (p - 1) * (spec.beta1(t) * dz + spec.beta2(t) * du))
        viol[sel] = lhs - rhs
    valid = np.isfinite(viol)

    def pt(w):
        return _point(t=times[t_idx[w]], y=y[w], y_prime=y2[w], z=z[w], z_prime=z2[w],
                      u=u[w], u_prime=u2[w])

    v = np.where(valid, viol, -np.inf)
    rep = _finalize(spec.branch, v, pt, int(valid.sum()), tolerance, cfg.seed,
                    {"generator": spec.name, "declared": spec.describe()})
    return rep


def check_consistency(spec: GeneratorSpec, times) -> AssumptionReport:
    """eval(t, 0, 0, 0) must reproduce f0(t) exactly and f0 must be finite."""
    times = np.asarray(times, dtype=float)
    y, z, u = spec.zeros(1)
    viol = np.empty(times.size)
    for i, t in enumerate(times):
        f0 = spec.f0_at(t, None, 1)
        fv = spec.eval(t, y, z, u)
        viol[i] = np.inf if not np.all(np.isfinite(f0)) else float(np.max(np.abs(fv - f0)))
    return _finalize("A1", viol, lambda w: {"t": float(times[w])}, times.size, 0.0, None,
                     {"generator": spec.name})


def check_growth(spec: GeneratorSpec, r: float, cfg: SamplerConfig = SamplerConfig(),
                 tolerance: float = 1e-9, times=None, psi=None) -> AssumptionReport:
    """Estimate psi_r(t) = sup_{|y|<=r} |f - f0| - Phi (|z| + ||u||) at each time.

    Half the samples put (z, u) = 0 with |y| on a uniform radial grid; the rest
    draw y in the r-ball and (z, u) from their balls.  When an analytic bound
    ``psi`` (a function of t) is supplied, the violation is estimate - psi;
    otherwise it is 0 for a finite estimate and +inf for a non-finite one.
    The per-time estimates are returned in ``details['psi']``.
    """
    if not r > 0:
        raise ValidationError(f"radius must be > 0, got {r}")
    rng = np.random.default_rng(cfg.seed)
    times = cfg.times() if times is None else np.asarray(times, dtype=float)
    per_t = max(2, int(cfg.n_samples) // max(1, times.size))
    n_rad = per_t // 2
    n_rand = per_t - n_rad
    lam = spec.intensities
    est = np.empty(times.size)
    worst = []
    for i, t in enumerate(times):
        dirs = _ball(rng, n_rad, (spec.d,), 1.0)
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
        radii = np.linspace(0.0, r, n_rad)
        y = np.concatenate([dirs * radii[:, None], _ball(rng, n_rand, (spec.d,), r)])
        z = np.concatenate([np.zeros((n_rad, spec.d, spec.k)),
                            _ball(rng, n_rand, (spec.d, spec.k), cfg.z_bound)])
        u = np.concatenate([np.zeros((n_rad, spec.n_atoms, spec.d)),
                            _ball(rng, n_rand, (spec.n_atoms, spec.d), cfg.u_bound)])
        idx = np.arange(y.shape[0])
        fv = _eval_checked(spec, t, y, z, u, idx)
        f0 = spec.f0_at(t, None, y.shape[0])
        dz = np.linalg.norm(z.reshape(y.shape[0], -1), axis=1)
        du = lnu_norm(u, lam, atom_axis=1) if lam.size else np.zeros(y.shape[0])
        vals = np.linalg.norm(fv - f0, axis=1) - spec.phi(t) * (dz + du)
        w = int(np.argmax(vals))
        est[i] = max(0.0, float(vals[w]))
        worst.append(_point(t=t, y=y[w], z=z[w], u=u[w]))
    if psi is not None:
        bound = np.array([float(psi(t)) for t in times])
        viol = est - bound
    else:
        viol = np.where(np.isfinite(est), 0.0, np.inf)
    rep = _finalize("A2", viol, lambda w: worst[w], per_t * times.size, tolerance, cfg.seed,
                    {"generator": spec.name, "r": r, "t": times.tolist(), "psi": est.tolist()})
    return rep


def psi_from_report(report: AssumptionReport):
    """Turn the per-time growth estimates of :func:`check_growth` into a function of t."""
    t = np.asarray(report.details["t"], dtype=float)
    v = np.asarray(report.details["psi"], dtype=float)

    def psi(s):
        return float(np.interp(s, t, v))

    return psi


def check_gamma(spec: GeneratorSpec, cfg: SamplerConfig = SamplerConfig(), tolerance: float = 1e-9,
                pairs=None) -> AssumptionReport:
    """Audit f(t,y,z,u) - f(t,y,z,u') <= sum_j lambda_j (u'_j - u_j) for u <= u' (d = 1).

    Random pairs are ordered by construction (u' = u + nonnegative shift).
    Explicit ``pairs`` of (u, u') are filtered: unordered pairs are rejected and
    counted in ``details['rejected']``.
    """
    if spec.d != 1:
        raise UnsupportedDimensionError(f"the jump-ordering check needs d = 1, got d = {spec.d}")
    rng = np.random.default_rng(cfg.seed)
    lam = spec.intensities
    J = spec.n_atoms
    rejected = 0
    if pairs is not None:
        pu = np.array([np.asarray(a, dtype=float).reshape(J) for a, _ in pairs]).reshape(-1, J)
        pv = np.array([np.asarray(b, dtype=float).reshape(J) for _, b in pairs]).reshape(-1, J)
        ok = np.all(pv >= pu, axis=1)
        rejected = int((~ok).sum())
        u, u2 = pu[ok][:, :, None], pv[ok][:, :, None]
    else:
        n = int(cfg.n_samples)
        u = rng.uniform(-cfg.u_bound, cfg.u_bound, (n, J, 1))
        shift = cfg.u_bound * 10.0 ** rng.uniform(-9, 0, (n, J, 1))
        shift *= rng.random((n, J, 1)) < 0.8
        u2 = u + shift
    n = u.shape[0]
    y = _ball(rng, n, (1,), cfg.y_bound)
    z = _ball(rng, n, (1, spec.k), cfg.z_bound)
    times = cfg.times()
    t_idx = rng.integers(0, times.size, n)
    viol = np.full(n, -np.inf)
    for ti, t in enumerate(times):
        sel = np.flatnonzero(t_idx == ti)
        if not sel.size:
            continue
        f1 = _eval_checked(spec, t, y[sel], z[sel], u[sel], sel)[:, 0]
        f2 = _eval_checked(spec, t, y[sel], z[sel], u2[sel], sel)[:, 0]
        rhs = ((u2[sel] - u[sel])[:, :, 0] * lam).sum(axis=1)
        viol[sel] = f1 - f2 - rhs

    def pt(w):
        return _point(t=times[t_idx[w]], y=y[w], z=z[w], u=u[w, :, 0], u_prime=u2[w, :, 0])

    return _finalize("Agamma", viol, pt, n, tolerance, cfg.seed,
                     {"generator": spec.name, "rejected": rejected})


def default_rho_grid() -> np.ndarray:
    return np.unique(np.concatenate([np.logspace(-6, 3, 2001), [1.0]]))


def check_rho_bounds(rho: RhoFunction, p: float, grid=None, tolerance: float = 1e-9) -> AssumptionReport:
    """Check the two power inequalities relating rho(|y|^2) and rho(|y|^p).

    p >= 2: rho(y^2) |y|^(p-2) <= rho(|y|^p) + rho(1) |y|^p.
    p < 2:  rho(|y|^p) |y|^(2-p) <= rho(y^2) + rho(1) y^2.
    The violation is measured relative to max(1, RHS) so the large-|y| end of
    the grid is judged at the same precision as the small end.
    """
    if not p > 0:
        raise ValidationError(f"p must be > 0, got {p}")
    y = default_rho_grid() if grid is None else np.abs(np.asarray(grid, dtype=float))
    r1 = float(rho(1.0))
    if p >= 2:
        lhs = rho(y**2) * y ** (p - 2)
        rhs = rho(y**p) + r1 * y**p
    else:
        lhs = rho(y**p) * y ** (2 - p)
        rhs = rho(y**2) + r1 * y**2
    viol = (lhs - rhs) / np.maximum(1.0, rhs)
    return _finalize("remA3", viol, lambda w: {"y": float(y[w]), "lhs": float(lhs[w]), "rhs": float(rhs[w])},
                     y.size, tolerance, None, {"rho": rho.to_dict(), "p": p})
