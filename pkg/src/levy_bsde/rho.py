"""Concave moduli rho used in the one-sided (Osgood) monotonicity condition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("linear", "log_osgood")


@dataclass(frozen=True)
class RhoFunction:
    """A nondecreasing concave modulus with rho(0) = 0.

    ``linear``: rho(x) = L x.
    ``log_osgood``: rho(x) = x (1 - log(x / x_star)) on (0, x_star] and the
    tangent continuation beyond.  The tangent at x_star is flat, so rho is
    constant (= x_star) for x > x_star.
    """

    family: str = "linear"
    L: float = 1.0
    x_star: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown rho family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "linear" and not self.L > 0:
            raise ValueError(f"linear rho needs L > 0, got {self.L}")
        if self.family == "log_osgood" and not self.x_star > 0:
            raise ValueError(f"log_osgood rho needs x_star > 0, got {self.x_star}")

    @classmethod
    def linear(cls, L: float = 1.0) -> "RhoFunction":
        return cls("linear", L=float(L))

    @classmethod
    def log_osgood(cls, x_star: float = 1.0) -> "RhoFunction":
        return cls("log_osgood", x_star=float(x_star))

    @classmethod
    def from_dict(cls, cfg: dict) -> "RhoFunction":
        cfg = dict(cfg)
        family = cfg.pop("family")
        if family == "linear":
            return cls.linear(**cfg)
        return cls.log_osgood(**cfg)

    def to_dict(self) -> dict:
        if self.family == "linear":
            return {"family": "linear", "L": self.L}
        return {"family": "log_osgood", "x_star": self.x_star}

    @property
    def name(self) -> str:
        if self.family == "linear":
            return f"linear(L={self.L:g})"
        return f"log_osgood(x_star={self.x_star:g})"

    @property
    def osgood(self) -> bool:
        """Whether the integral of 1/rho diverges at 0+ (true for both families)."""
        return True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "linear":
            return self.L * np.maximum(x, 0.0)
        xs = self.x_star
        inner = np.clip(x, np.finfo(float).tiny, xs)
        val = np.where(x < xs, inner * (1.0 - np.log(inner / xs)), xs)
        return np.where(x > 0, val, 0.0)

    def scalar(self, x: float) -> float:
        """Fast evaluation at one float (used inside quadrature loops)."""
        if x <= 0:
            return 0.0
        if self.family == "linear":
            return self.L * x
        if x >= self.x_star:
            return self.x_star
        return x * (1.0 - math.log(x / self.x_star))

    def slope(self, x):
        """Right derivative rho'(x) for x > 0."""
        x = np.asarray(x, dtype=float)
        if self.family == "linear":
            return np.full_like(x, self.L)
        inner = np.clip(x, np.finfo(float).tiny, self.x_star)
        return np.where(x < self.x_star, -np.log(inner / self.x_star), 0.0)

    def check_shape(self, grid=None, rtol: float = 1e-12) -> dict:
        """Grid check of rho(0) = 0, monotonicity and concavity.

        Concavity is tested through the finite-difference slopes, which must
        be nonincreasing up to ``rtol`` relative slack.
        """
        if grid is None:
            grid = np.concatenate([[0.0], np.logspace(-12, 4, 4001)])
        x = np.sort(np.asarray(grid, dtype=float))
        v = self(x)
        slopes = np.diff(v) / np.diff(x)
        scale = np.maximum(np.abs(slopes[:-1]), 1.0)
        return {
            "zero_at_zero": bool(self(0.0) == 0.0),
            "nondecreasing": bool(np.all(np.diff(v) >= -rtol * np.maximum(np.abs(v[1:]), 1.0))),
            "concave": bool(np.all(np.diff(slopes) <= rtol * scale)),
        }
