"""Least-squares conditional expectations on a global polynomial basis."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

MAX_CONDITION = 1e14


class RegressionError(RuntimeError):
    def __init__(self, message: str, condition: float = math.inf):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


def monomial_exponents(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of all non-constant monomials of total degree <= degree."""
    out = []
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), deg):
            e = [0] * n_vars
            for c in combo:
                e[c] += 1
            out.append(tuple(e))
    return out


class Regressor:
    """Ridge least squares of per-path values on polynomials of the state.

    The state components are standardized and components without spread are
    dropped.  The non-constant columns are centred so the intercept is the
    sample mean and is never penalized: with degree 0 (or a degenerate state)
    the fit is exactly ``np.mean``.  The factorization is reused for every
    right-hand side fitted at the same step.
    """

    def __init__(self, states: np.ndarray, degree: int, ridge: float = 1e-10):
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        self.M = states.shape[0]
        spread = np.ptp(states, axis=0) > 0 if self.M else np.zeros(states.shape[1], bool)
        x = states[:, spread]
        if x.shape[1]:
            x = (x - x.mean(axis=0)) / x.std(axis=0)
        self.exponents = monomial_exponents(x.shape[1], int(degree))
        self.n_basis = 1 + len(self.exponents)
        if self.M < self.n_basis:
            raise RegressionError(f"{self.M} paths cannot fit {self.n_basis} basis functions")
        if self.exponents:
            H = np.stack([np.prod(x**np.array(e), axis=1) for e in self.exponents], axis=1)
            self.Hc = H - H.mean(axis=0)
            G = self.Hc.T @ self.Hc / self.M + ridge * np.eye(len(self.exponents))
            ev = np.linalg.eigvalsh(G)
            self.condition = float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf
            if not self.condition < MAX_CONDITION:
                raise RegressionError("normal equations are singular beyond ridge repair", self.condition)
            try:
                self._chol = cho_factor(G)
            except LinAlgError as exc:
                raise RegressionError(f"Cholesky factorization failed: {exc}", self.condition) from None
        else:
            self.Hc = None
            self.condition = 1.0

    def fit(self, values: np.ndarray):
        """Return (coefficients, fitted values, standard error of the fit).

        ``values`` is (M,) or (M, r); coefficients are (n_basis, r) with the
        intercept first (in centred-column coordinates).  Columns that are
        constant across paths are reproduced exactly.
        """
        v = np.asarray(values, dtype=float)
        flat = v.ndim == 1
        V = v[:, None] if flat else v.reshape(self.M, -1)
        r = V.shape[1]
        fitted = np.empty_like(V)
        coef = np.zeros((self.n_basis, r))
        se = np.zeros(r)
        if r == 0:
            return coef, fitted.reshape(v.shape), se
        const = np.ptp(V, axis=0) == 0
        mean = V.mean(axis=0)
        coef[0] = mean
        if self.Hc is not None and not np.all(const):
            B = cho_solve(self._chol, self.Hc.T @ (V - mean) / self.M)
            coef[1:] = B
            fitted[:] = mean + self.Hc @ B
        else:
            fitted[:] = mean
        fitted[:, const] = V[0, const]
        coef[0, const] = V[0, const]
        coef[1:, const] = 0.0
        resid = V - fitted
        if self.M > 1:
            se = resid.std(axis=0) * math.sqrt(self.n_basis / self.M)
        out = fitted[:, 0] if flat else fitted.reshape(v.shape)
        return coef, out, se


def regress(values, states, degree: int = 2, ridge: float = 1e-10):
    """One-shot regression: (coefficients, fitted values, fit standard error)."""
    return Regressor(states, degree, ridge).fit(values)
