"""Generators f(t, y, z, u), their declared coefficients, and truncation constructions.

Array conventions (M = batch of paths or samples, J = number of atoms):
y is (M, d), z is (M, d, k), u is (M, J, d); f returns (M, d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .levy import LevyModel, TimeGrid, ValidationError, lnu_norm
from .rho import RhoFunction

Coefficient = Callable[[float], float]


@dataclass(frozen=True)
class PathContext:
    """Per-step information handed to path-dependent generators."""

    step: int
    X: np.ndarray


def constant(c: float) -> Coefficient:
    c = float(c)

    def coef(t: float) -> float:
        return c

    coef.value = c
    return coef


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """A generator together with the coefficients it is declared to satisfy.

    ``beta`` is the (z, u) coefficient of the p >= 2 condition; ``beta1`` and
    ``beta2`` (with exponent ``q``) are the separate z and u coefficients of
    the p < 2 condition.  ``psi`` optionally gives an analytic growth bound:
    ``psi(r)`` returns t -> sup_{|y|<=r} |f - f0| - Phi (|z| + ||u||).
    """

    name: str
    p: float
    d: int
    k: int
    intensities: np.ndarray
    func: Callable
    f0: Callable
    alpha: Coefficient
    mu: Coefficient
    beta: Coefficient
    beta1: Coefficient
    beta2: Coefficient
    rho: RhoFunction
    q: float = 2.0
    y_dependent: bool = True
    f0_is_zero: bool = False
    psi: Optional[Callable[[float], Callable[[float], float]]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.p > 1:
            raise ValidationError(f"solution exponent p must be > 1, got {self.p}")
        if self.p < 2 and not self.q >= 2:
            raise ValidationError(f"p < 2 requires q >= 2, got q={self.q}")
        lam = np.asarray(self.intensities, dtype=float).reshape(-1)
        object.__setattr__(self, "intensities", lam)

    @property
    def n_atoms(self) -> int:
        return self.intensities.shape[0]

    @property
    def branch(self) -> str:
        return "A3>=2" if self.p >= 2 else "A3<2"

    def phi(self, t: float) -> float:
        """Growth coefficient Phi: beta, or beta1 + beta2 when p < 2."""
        return self.beta(t) if self.p >= 2 else self.beta1(t) + self.beta2(t)

    def eval(self, t, y, z, u, ctx: PathContext | None = None) -> np.ndarray:
        out = np.asarray(self.func(t, y, z, u, ctx), dtype=float)
        return np.broadcast_to(out, y.shape)

    def f0_at(self, t, ctx: PathContext | None, M: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.f0(t, ctx), dtype=float), (M, self.d))

    def zeros(self, M: int):
        """Zero (y, z, u) arrays for a batch of size M."""
        return (
            np.zeros((M, self.d)),
            np.zeros((M, self.d, self.k)),
            np.zeros((M, self.n_atoms, self.d)),
        )

    def describe(self) -> dict:
        def val(c):
            return getattr(c, "value", "function")

        return {
            "name": self.name,
            "p": self.p,
            "branch": self.branch,
            "rho": self.rho.to_dict(),
            "alpha": val(self.alpha),
            "mu": val(self.mu),
            "beta": val(self.beta),
            "beta1": val(self.beta1),
            "beta2": val(self.beta2),
            "q": self.q,
            "params": dict(self.params),
        }

    def check_matches(self, model: LevyModel) -> None:
        if (self.d, self.k, self.n_atoms) != (model.d, model.k, model.n_atoms):
            raise ValidationError(
                f"generator {self.name!r} has (d, k, atoms) = {(self.d, self.k, self.n_atoms)}, "
                f"model has {(model.d, model.k, model.n_atoms)}"
            )


# --- truncation machinery ----------------------------------------------------


def theta_r(y, r: float, axis: int | None = -1) -> np.ndarray:
    """Smooth cutoff: 1 on |y| <= r, 0 on |y| >= r + 1, quintic bridge between.

    With ``axis=None`` the input is read as the radius |y| itself.
    """
    if not r > 0:
        raise ValidationError(f"radius must be > 0, got {r}")
    y = np.asarray(y, dtype=float)
    rad = np.abs(y) if axis is None or y.ndim == 0 else np.linalg.norm(y, axis=axis)
    w = np.clip(rad - r, 0.0, 1.0)
    return 1.0 - w**3 * (10.0 - 15.0 * w + 6.0 * w**2)


THETA_LIPSCHITZ = 15.0 / 8.0


def _batch_norm(v: np.ndarray, intensities, batch_ndim: int) -> np.ndarray:
    if intensities is None:
        axes = tuple(range(batch_ndim, v.ndim))
        return np.sqrt((v**2).sum(axis=axes)) if axes else np.abs(v)
    return lnu_norm(v, intensities, atom_axis=batch_ndim)


def project_ball(v, n: float, intensities=None, batch_ndim: int = 0) -> np.ndarray:
    """Radial projection v -> n v / (||v|| v n) onto the ball of radius n.

    The norm is Euclidean, or the L2(nu) norm when ``intensities`` is given
    (atom axis first after the batch axes).  The first ``batch_ndim`` axes are
    independent vectors.  Vectors already inside the ball are returned
    unchanged, bit for bit.
    """
    if not n > 0:
        raise ValidationError(f"ball radius must be > 0, got {n}")
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    nrm = _batch_norm(v, intensities, batch_ndim)
    inside = nrm <= n
    shape = nrm.shape + (1,) * (v.ndim - nrm.ndim)
    factor = (n / np.where(inside, n, nrm)).reshape(shape)
    return np.where(inside.reshape(shape), v, factor * v)


def truncate_terminal(xi, n: float) -> np.ndarray:
    """Per-path Euclidean projection of terminal values onto the ball of radius n."""
    xi = np.asarray(xi, dtype=float)
    return project_ball(xi, n, batch_ndim=1)


def _damping(psi, t, n) -> float:
    ps = float(psi(t)) if callable(psi) else float(psi)
    return 1.0 if ps <= n else n / ps


def build_fn(spec: GeneratorSpec, r: float, n: float, psi) -> GeneratorSpec:
    """f_n = (f(t, y, c_n z, c~_n u) - f0) n / (psi v n) + f0.

    ``psi`` is the growth bound at radius r + 1, as a function of t (or a
    constant).  Where every truncation is inactive the original value of f is
    returned unchanged.
    """
    lam = spec.intensities

    def func(t, y, z, u, ctx=None):
        zc = project_ball(z, n, batch_ndim=1)
        uc = project_ball(u, n, lam, batch_ndim=1)
        fv = spec.eval(t, y, zc, uc, ctx)
        scale = _damping(psi, t, n)
        if scale == 1.0:
            return fv
        f0 = spec.f0_at(t, ctx, y.shape[0])
        return (fv - f0) * scale + f0

    return replace(
        spec,
        name=f"{spec.name}|f_n(n={n:g},r={r:g})",
        func=func,
        params={**spec.params, "truncation": {"kind": "f_n", "n": n, "r": r}},
    )


def build_hn(spec: GeneratorSpec, r: float, n: float, psi) -> GeneratorSpec:
    """h_n = theta_r(y) (f(t, y, c_n z, c~_n u) - f0) n / (psi v n) + f0."""
    lam = spec.intensities

    def func(t, y, z, u, ctx=None):
        zc = project_ball(z, n, batch_ndim=1)
        uc = project_ball(u, n, lam, batch_ndim=1)
        fv = spec.eval(t, y, zc, uc, ctx)
        scale = _damping(psi, t, n)
        th = theta_r(y, r)[:, None]
        f0 = spec.f0_at(t, ctx, y.shape[0])
        damped = th * (fv - f0) * scale + f0
        return np.where((th == 1.0) & (scale == 1.0), fv, damped)

    return replace(
        spec,
        name=f"{spec.name}|h_n(n={n:g},r={r:g})",
        func=func,
        params={**spec.params, "truncation": {"kind": "h_n", "n": n, "r": r}},
    )


def shift_generator(spec: GeneratorSpec, c: float) -> GeneratorSpec:
    """f + c (and f0 + c); the declared coefficients are unchanged."""

    def func(t, y, z, u, ctx=None):
        return spec.eval(t, y, z, u, ctx) + c

    def f0(t, ctx=None):
        return np.asarray(spec.f0(t, ctx)) + c

    return replace(
        spec,
        name=f"{spec.name}+{c:g}",
        func=func,
        f0=f0,
        f0_is_zero=spec.f0_is_zero and c == 0,
        psi=spec.psi,
        params={**spec.params, "shift": c},
    )


def scale_data(spec: GeneratorSpec, eps: float) -> GeneratorSpec:
    """(f - f0) + eps f0: the generator with its zero-point data scaled by eps."""
    if spec.f0_is_zero or eps == 1.0:
        return spec

    def func(t, y, z, u, ctx=None):
        f0 = spec.f0_at(t, ctx, y.shape[0])
        return spec.eval(t, y, z, u, ctx) - f0 + eps * f0

    def f0(t, ctx=None):
        return eps * np.asarray(spec.f0(t, ctx))

    return replace(spec, name=f"{spec.name}*eps={eps:g}", func=func, f0=f0, f0_is_zero=eps == 0)


# --- registry ----------------------------------------------------------------


def _ylogy(y: np.ndarray) -> np.ndarray:
    """-y log|y| with the continuous value 0 at y = 0 (|y| Euclidean per row)."""
    rad = np.linalg.norm(y, axis=-1, keepdims=True)
    safe = np.where(rad > 0, rad, 1.0)
    return np.where(rad > 0, -y * np.log(safe), 0.0)


def _zsum(z: np.ndarray) -> np.ndarray:
    return z.sum(axis=-1)


def _ylogy_sup(r: float) -> float:
    """max of s |log s| over s in [0, r]."""
    if r <= 0:
        return 0.0
    if r <= math.exp(-1):
        return r * abs(math.log(r))
    return max(math.exp(-1), r * math.log(r)) if r > 1 else math.exp(-1)


def _const_f0(c: float, d: int):
    val = np.full(d, float(c))

    def f0(t, ctx=None):
        return val

    return f0


def _base(model: LevyModel, name: str, p: float, func, *, f0_const=0.0, alpha=0.0, mu=0.0,
          bz=0.0, bu=0.0, rho=None, psi=None, q=2.0, y_dependent=True, params=None):
    return GeneratorSpec(
        name=name,
        p=float(p),
        d=model.d,
        k=model.k,
        intensities=model.intensities,
        func=func,
        f0=_const_f0(f0_const, model.d),
        alpha=constant(alpha),
        mu=constant(mu),
        beta=constant(max(bz, bu)),
        beta1=constant(bz),
        beta2=constant(bu),
        rho=rho or RhoFunction.linear(1.0),
        q=float(q),
        y_dependent=y_dependent,
        f0_is_zero=f0_const == 0,
        psi=psi,
        params=dict(params or {}),
    )


def zero_generator(model: LevyModel, grid: TimeGrid | None = None, p: float = 2.0, q: float = 2.0):
    def func(t, y, z, u, ctx=None):
        return np.zeros_like(y)

    return _base(model, "zero", p, func, q=q, y_dependent=False,
                 psi=lambda r: (lambda t: 0.0))


def linear_drift(model: LevyModel, grid: TimeGrid | None = None, p: float = 2.0, q: float = 2.0,
                 kappa: float = 1.0, b: float = 0.0, c: float = 0.0):
    """f = -kappa y + b sum_k z + c; declared mu = -kappa, beta = |b| sqrt(k)."""

    def func(t, y, z, u, ctx=None):
        out = -kappa * y + c
        if b and z.shape[-1]:
            out = out + b * _zsum(z)
        return out

    bz = abs(b) * math.sqrt(model.k)
    return _base(model, "linear_drift", p, func, f0_const=c, mu=-kappa, bz=bz, q=q,
                 y_dependent=kappa != 0, psi=lambda r: (lambda t: abs(kappa) * r),
                 params={"kappa": kappa, "b": b, "c": c})


def ylogy_osgood(model: LevyModel, grid: TimeGrid | None = None, p: float = 2.0, q: float = 2.0,
                 b: float = 0.0, c: float = 0.0, x_star: float = 1.0):
    """f = -y log|y| + b sum_k z + c with rho = log_osgood(x_star), alpha = mu = 1."""

    def func(t, y, z, u, ctx=None):
        out = _ylogy(y) + c
        if b and z.shape[-1]:
            out = out + b * _zsum(z)
        return out

    bz = abs(b) * math.sqrt(model.k)
    return _base(model, "ylogy_osgood", p, func, f0_const=c, alpha=1.0, mu=1.0, bz=bz,
                 rho=RhoFunction.log_osgood(x_star), q=q,
                 psi=lambda r: (lambda t, s=_ylogy_sup(r): s),
                 params={"b": b, "c": c, "x_star": x_star})


def showcase_simplified(model: LevyModel, grid: TimeGrid | None = None, p: float = 2.0,
                        q: float = 2.0, mu0: float = 0.1, b1: float = 0.5, b2: float = 0.5,
                        c: float = 0.0, t_min: float | None = None, x_star: float = 1.0,
                        y_bound: float = 10.0, u_bound: float = 10.0):
    """Scalar example with singular time weight, super-linear drift and jump coupling.

    f = -(1/sqrt(t)) y log|y| - mu0 (y^3 + y^(1/3)) + b1 (z + sin z cos y)
        + b2 sum_j lambda_j kappa_j (arctan(y kappa_j u_j) + u_j) + c,
    kappa_j = min(1, |x_j|), with t clamped below at ``t_min`` (default dt/2).

    The arctan coupling is only one-sided Lipschitz on bounded (y, u), so the
    declared mu and beta2 hold on |y| <= y_bound, |u_j| <= u_bound.
    """
    if model.d != 1 or model.k > 1:
        raise ValidationError("showcase_simplified needs d = 1 and k <= 1")
    if t_min is None:
        t_min = 0.5 * (float(grid.dt.min()) if grid is not None else 1e-3)
    kap = np.minimum(1.0, np.linalg.norm(model.marks, axis=1)) if model.n_atoms else np.zeros(0)
    lam = model.intensities
    w = lam * kap

    def func(t, y, z, u, ctx=None):
        tt = max(float(t), t_min)
        yy = y[:, 0]
        out = _ylogy(y)[:, 0] / math.sqrt(tt) - mu0 * (yy**3 + np.cbrt(yy)) + c
        if z.shape[-1]:
            zz = z[:, 0, 0]
            out = out + b1 * (zz + np.sin(zz) * np.cos(yy))
        if w.size:
            uu = u[:, :, 0]
            out = out + b2 * (w * (np.arctan(yy[:, None] * kap * uu) + uu)).sum(axis=1)
        return out[:, None]

    def alpha(t):
        return 1.0 / math.sqrt(max(float(t), t_min))

    s_kap2 = float((lam * kap**2).sum())
    mu_const = abs(b1) + abs(b2) * s_kap2 * u_bound
    # d/du_j of the jump term is lambda_j kappa_j (1 + y kappa_j / (1 + (y kappa_j u_j)^2))
    bu = abs(b2) * math.sqrt(float((lam * kap**2 * (1.0 + kap * y_bound) ** 2).sum()))
    bz = 2.0 * abs(b1)

    def mu(t):
        return alpha(t) + mu_const

    spec = _base(model, "showcase_simplified", p, func, f0_const=c, bz=bz, bu=bu,
                 rho=RhoFunction.log_osgood(x_star), q=q,
                 params={"mu0": mu0, "b1": b1, "b2": b2, "c": c, "t_min": t_min,
                         "y_bound": y_bound, "u_bound": u_bound})
    return replace(spec, alpha=alpha, mu=mu)


def y_squared(model: LevyModel, grid: TimeGrid | None = None, p: float = 2.0, q: float = 2.0,
              mu: float = 1.0):
    """f = y^2 componentwise, declared alpha = 0, mu = mu: a known violator."""

    def func(t, y, z, u, ctx=None):
        return y**2

    return _base(model, "y_squared", p, func, mu=mu, q=q,
                 psi=lambda r: (lambda t: r * r))


def jump_linear(model: LevyModel, grid: TimeGrid | None = None, p: float = 2.0, q: float = 2.0,
                weight: float = 1.0):
    """f = weight * sum_j lambda_j u_j; satisfies the jump-ordering condition iff weight >= -1."""
    lam = model.intensities

    def func(t, y, z, u, ctx=None):
        if not lam.size:
            return np.zeros_like(y)
        return weight * np.einsum("j,mjd->md", lam, u)

    bu = abs(weight) * math.sqrt(float(lam.sum()))
    return _base(model, "jump_linear", p, func, bu=bu, q=q, y_dependent=False,
                 psi=lambda r: (lambda t: 0.0), params={"weight": weight})


REGISTRY: dict[str, Callable[..., GeneratorSpec]] = {
    "zero": zero_generator,
    "linear_drift": linear_drift,
    "ylogy_osgood": ylogy_osgood,
    "showcase_simplified": showcase_simplified,
    "y_squared": y_squared,
    "jump_linear": jump_linear,
}


def make_generator(gen_id: str, model: LevyModel, grid: TimeGrid | None = None,
                   p: float = 2.0, **params) -> GeneratorSpec:
    try:
        builder = REGISTRY[gen_id]
    except KeyError:
        raise ValidationError(f"unknown generator id {gen_id!r}; known: {sorted(REGISTRY)}") from None
    try:
        return builder(model, grid, p=p, **params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for generator {gen_id!r}: {exc}") from None
