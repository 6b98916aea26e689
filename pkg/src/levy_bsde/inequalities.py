"""Backward Bihari-LaSalle and Gronwall bounds, Young's product bound and an Osgood test."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq

from .levy import ValidationError
from .rho import RhoFunction

QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-14
LOG_LO = math.log(1e-300)
LOG_HI = math.log(1e300)


class QuadratureError(ArithmeticError):
    def __init__(self, a: float, b: float, message: str):
        super().__init__(f"quadrature of 1/rho failed on [{a:.6g}, {b:.6g}]: {message}")
        self.interval = (a, b)


class InequalityViolation(AssertionError):
    pass


def _rho_scalar(rho):
    return rho.scalar if hasattr(rho, "scalar") else (lambda x: float(rho(x)))


def _kinks(rho) -> list[float]:
    if isinstance(rho, RhoFunction) and rho.family == "log_osgood":
        return [math.log(rho.x_star)]
    return []


def log_integral(rho, s0: float, s1: float) -> float:
    """Integral of 1/rho(r) dr from e^s0 to e^s1, computed in the variable s = log r."""
    if s0 == s1:
        return 0.0
    sign = 1.0
    if s1 < s0:
        s0, s1, sign = s1, s0, -1.0
    f = _rho_scalar(rho)

    def integrand(s):
        r = math.exp(s)
        return r / f(r)

    pts = [k for k in _kinks(rho) if s0 < k < s1]
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            total = 0.0
            edges = [s0, *pts, s1]
            for a, b in zip(edges[:-1], edges[1:]):
                val, _ = quad(integrand, a, b, epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=200)
                total += val
        except (IntegrationWarning, ZeroDivisionError, OverflowError) as exc:
            raise QuadratureError(math.exp(s0), math.exp(s1), str(exc)) from None
    return sign * total


def G(rho, x: float) -> float:
    """G(x) = integral of dr / rho(r) from 1 to x (x > 0)."""
    if not x > 0:
        raise ValidationError(f"G is defined for x > 0, got {x}")
    return log_integral(rho, 0.0, math.log(x))


def G_range(rho) -> tuple[float, float]:
    """Values of G at the ends of the bracket [1e-300, 1e300]."""
    return G(rho, 1e-300), G(rho, 1e300)


def G_inv(rho, v: float, g_range: tuple[float, float] | None = None) -> float:
    """Inverse of G by bracketed root finding in log space; inf outside the range."""
    lo, hi = G_range(rho) if g_range is None else g_range
    if v > hi:
        return math.inf
    if v < lo:
        return 0.0
    s = brentq(lambda s: log_integral(rho, 0.0, s) - v, LOG_LO, LOG_HI, xtol=1e-14, rtol=4 * np.finfo(float).eps,
               maxiter=500)
    return math.exp(s)


def _grid_and_K(K, grid):
    t = np.asarray(getattr(grid, "nodes", grid), dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValidationError("grid must be a strictly increasing 1-d array of nodes")
    Kv = np.broadcast_to(np.asarray(K(t) if callable(K) else K, dtype=float), t.shape).copy()
    if np.any(Kv < 0) or not np.all(np.isfinite(Kv)):
        raise ValidationError("K must be finite and non-negative at every node")
    return t, Kv


def tail_integral(K, grid) -> np.ndarray:
    """Trapezoid values of the integral of K from t_i to T at every node."""
    t, Kv = _grid_and_K(K, grid)
    cells = 0.5 * (Kv[1:] + Kv[:-1]) * np.diff(t)
    out = np.zeros_like(t)
    out[:-1] = np.cumsum(cells[::-1])[::-1]
    return out


@dataclass(frozen=True)
class BihariBound:
    c: float
    t: np.ndarray
    K: np.ndarray
    rho: RhoFunction
    bound: np.ndarray
    in_domain: np.ndarray

    def rows(self):
        return [(float(ti), float(b), bool(d)) for ti, b, d in zip(self.t, self.bound, self.in_domain)]


def bihari_bound(c: float, K, rho, grid) -> BihariBound:
    """y(t) <= G^{-1}(G(c) + int_t^T K) at every grid node.

    For c = 0 and an Osgood rho the bound is identically zero.  Arguments
    beyond the numerical range of G are flagged out of domain with bound +inf.
    """
    if not c >= 0:
        raise ValidationError(f"c must be >= 0, got {c}")
    t, Kv = _grid_and_K(K, grid)
    tail = tail_integral(Kv, t)
    n = t.size
    if c == 0 and getattr(rho, "osgood", False):
        return BihariBound(0.0, t, Kv, rho, np.zeros(n), np.ones(n, bool))
    if c == 0:
        raise ValidationError("c = 0 needs an Osgood rho (G(0) is finite otherwise)")
    g_range = G_range(rho)
    Gc = G(rho, c)
    bound = np.empty(n)
    ok = np.ones(n, bool)
    for i in range(n):
        if tail[i] == 0.0:
            bound[i] = c
            continue
        v = Gc + tail[i]
        if v > g_range[1]:
            bound[i], ok[i] = math.inf, False
        else:
            bound[i] = G_inv(rho, v, g_range)
    return BihariBound(float(c), t, Kv, rho, bound, ok)


def gronwall_bound(c: float, K, grid) -> np.ndarray:
    """c exp(int_t^T K) at every node."""
    if not c >= 0:
        raise ValidationError(f"c must be >= 0, got {c}")
    return c * np.exp(tail_integral(K, grid))


def equality_case(c: float, K, rho, grid) -> np.ndarray:
    """y on the grid from y_N = c, y_i = y_{i+1} + rho(y_{i+1}) * (trapezoid integral of K over the cell)."""
    t, Kv = _grid_and_K(K, grid)
    cells = 0.5 * (Kv[1:] + Kv[:-1]) * np.diff(t)
    y = np.empty_like(t)
    y[-1] = c
    f = _rho_scalar(rho)
    for i in range(t.size - 2, -1, -1):
        y[i] = y[i + 1] + f(y[i + 1]) * cells[i]
    return y


def young_bound(a: float, b: float, p: float, q: float, R: float = 1.0) -> tuple[float, float]:
    """(ab, a^p / (p R) + b^q R^(q/p) / q) for conjugate exponents p, q."""
    if a < 0 or b < 0:
        raise ValidationError("a and b must be non-negative")
    if not (p > 1 and q > 1):
        raise ValidationError("p and q must exceed 1")
    if abs(1.0 / p + 1.0 / q - 1.0) > 1e-12:
        raise ValidationError(f"p={p}, q={q} are not conjugate: 1/p + 1/q = {1 / p + 1 / q}")
    if not R > 0:
        raise ValidationError("R must be > 0")
    prod = a * b
    bound = a**p / (p * R) + b**q * R ** (q / p) / q
    if prod > bound * (1 + 1e-12):
        raise InequalityViolation(f"product {prod} exceeds bound {bound}")
    return prod, bound


def osgood_divergence(rho, eps0: float = 1.0, decades: int = 8) -> dict:
    """Partial integrals of 1/rho over [eps0 10^-m, eps0] for m = 1..decades.

    Verdict ``diverging`` when every decade adds a positive amount and the
    increments do not decay faster than 1/m (the tail of m times the
    increment stays above 5% of its maximum); ``converging`` otherwise.
    ``growth`` is ``linear`` when all increments agree to 1e-6.
    """
    if not eps0 > 0:
        raise ValidationError("eps0 must be > 0")
    if int(decades) < 3:
        raise ValidationError("need at least 3 decades")
    s_top = math.log(eps0)
    ln10 = math.log(10.0)
    incs = np.array([log_integral(rho, s_top - m * ln10, s_top - (m - 1) * ln10) for m in range(1, decades + 1)])
    partials = np.cumsum(incs)
    m = np.arange(1, decades + 1)
    weighted = m * incs
    diverging = bool(np.all(incs > 0) and weighted[-1] >= 0.05 * weighted.max())
    linear = bool(np.ptp(incs) <= 1e-6 * abs(incs).max())
    return {
        "m": m.tolist(),
        "partials": partials.tolist(),
        "increments": incs.tolist(),
        "verdict": "diverging" if diverging else "converging",
        "growth": "linear" if linear else "sublinear",
    }
