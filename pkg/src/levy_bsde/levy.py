"""Lévy driving noise with a finite atomic jump measure, and forward path ensembles."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._io import fmt


class ValidationError(ValueError):
    """Raised when a model, grid or argument violates its invariants."""


@dataclass(frozen=True)
class LevyModel:
    """Drift ``a``, diffusion ``sigma`` (d x k) and atoms ``(marks[j], intensities[j])``.

    Every atom is compensated in the simulated state; the intensity-weighted
    marks of the big jumps (|x| > 1) are folded into :attr:`adjusted_drift`.
    """

    d: int
    k: int
    a: np.ndarray
    sigma: np.ndarray
    marks: np.ndarray = field(default=None)
    intensities: np.ndarray = field(default=None)

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValidationError(f"d must be a positive integer, got {self.d}")
        if int(self.k) < 0:
            raise ValidationError(f"k must be non-negative, got {self.k}")
        d, k = int(self.d), int(self.k)
        a = np.array(self.a, dtype=float).reshape(-1)
        if a.shape != (d,):
            raise ValidationError(f"drift a must have length {d}, got shape {a.shape}")
        sigma = np.array(self.sigma, dtype=float).reshape(d, k) if k else np.zeros((d, 0))
        marks = np.zeros((0, d)) if self.marks is None else np.array(self.marks, dtype=float)
        marks = marks.reshape(-1, d)
        lam = np.zeros(0) if self.intensities is None else np.array(self.intensities, dtype=float)
        lam = lam.reshape(-1)
        if lam.shape[0] != marks.shape[0]:
            raise ValidationError(f"{marks.shape[0]} marks but {lam.shape[0]} intensities")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValidationError(f"atom intensities must be finite and > 0, got {lam.tolist()}")
        if marks.shape[0] and np.any(np.linalg.norm(marks, axis=1) == 0):
            raise ValidationError("atom marks must be nonzero")
        for name, arr in (("a", a), ("sigma", sigma), ("marks", marks)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
            arr.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "intensities", lam)

    @property
    def n_atoms(self) -> int:
        return self.marks.shape[0]

    @property
    def total_intensity(self) -> float:
        return float(self.intensities.sum())

    @property
    def adjusted_drift(self) -> np.ndarray:
        """a + sum of lambda_j x_j over atoms with |x_j| > 1."""
        if not self.n_atoms:
            return self.a.copy()
        big = np.linalg.norm(self.marks, axis=1) > 1.0
        return self.a + (self.intensities[big, None] * self.marks[big]).sum(axis=0)

    def lnu_norm(self, u, atom_axis: int = -1) -> np.ndarray:
        return lnu_norm(u, self, atom_axis)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "k": self.k,
            "a": self.a.tolist(),
            "sigma": self.sigma.tolist(),
            "atoms": [
                {"mark": m.tolist(), "intensity": float(l)}
                for m, l in zip(self.marks, self.intensities)
            ],
        }


def lnu_norm(u, model, atom_axis: int = -1) -> np.ndarray:
    """L2(nu) norm sqrt(sum_j lambda_j |u_j|^2) of per-atom values.

    ``atom_axis`` indexes the atom axis of ``u``; any axes after it hold the
    components of a vector-valued u_j and are summed in squares.  ``model``
    may be a :class:`LevyModel` or the intensity vector itself.
    """
    lam = np.asarray(getattr(model, "intensities", model), dtype=float)
    u = np.asarray(u, dtype=float)
    ax = atom_axis % u.ndim if u.ndim else 0
    if u.ndim == 0 or u.shape[ax] != lam.shape[0]:
        raise ValidationError(f"u of shape {u.shape} does not match {lam.shape[0]} atoms")
    sq = u**2
    trailing = tuple(range(ax + 1, u.ndim))
    if trailing:
        sq = sq.sum(axis=trailing)
    return np.sqrt((sq * lam).sum(axis=-1))


def truncate_levy(model: LevyModel, n: int) -> LevyModel:
    """Keep only the atoms with |x_j| >= 1/n."""
    if n < 1:
        raise ValidationError(f"truncation level must be >= 1, got {n}")
    keep = np.linalg.norm(model.marks, axis=1) >= 1.0 / n
    return LevyModel(model.d, model.k, model.a, model.sigma, model.marks[keep], model.intensities[keep])


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float).reshape(-1)
        if t.size < 2 or t[0] != 0.0:
            raise ValidationError("grid needs at least two nodes starting at 0")
        if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise ValidationError("grid nodes must be finite and strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T: float, N: int) -> "TimeGrid":
        if not T > 0:
            raise ValidationError(f"horizon T must be > 0, got {T}")
        if int(N) < 1:
            raise ValidationError(f"N must be a positive integer, got {N}")
        t = np.arange(N + 1) * (T / N)
        t[-1] = T
        return cls(t)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Seeded Monte Carlo forward paths.

    Attributes
    ----------
    dW : (M, N, k) Brownian increments.
    counts : (M, N, J) Poisson jump counts per atom.
    X : (M, N+1, d) forward state, X[:, 0] = 0.
    """

    model: LevyModel
    grid: TimeGrid
    seed: int
    dW: np.ndarray
    counts: np.ndarray
    X: np.ndarray

    @property
    def M(self) -> int:
        return self.X.shape[0]

    def compensated(self, i: int | None = None) -> np.ndarray:
        """counts - lambda_j dt_i, for one step or all steps."""
        lam_dt = self.grid.dt[:, None] * self.model.intensities[None, :]
        if i is None:
            return self.counts - lam_dt[None]
        return self.counts[:, i] - lam_dt[i][None]

    @property
    def W(self) -> np.ndarray:
        """Brownian paths (M, N+1, k) with W_0 = 0."""
        out = np.zeros((self.M, self.grid.N + 1, self.model.k))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def write_csv(self, path) -> None:
        """Dump the forward state as ``path,step,component,X`` rows."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("path,step,component,X\n")
            M, n1, d = self.X.shape
            for m in range(M):
                rows = self.X[m]
                fh.write(
                    "".join(
                        f"{m},{i},{c},{fmt(rows[i, c])}\n" for i in range(n1) for c in range(d)
                    )
                )


def _simulate_chunk(model: LevyModel, grid: TimeGrid, seed: int, paths: np.ndarray):
    N = grid.N
    dt = grid.dt
    dW = rng.normals(seed, paths, N, rng.BROWNIAN, model.k) * np.sqrt(dt)[None, :, None]
    lam_dt = dt[:, None] * model.intensities[None, :]
    counts = rng.poissons(seed, paths, N, rng.POISSON, lam_dt)
    incr = np.broadcast_to(model.adjusted_drift * dt[:, None], (paths.size, N, model.d)).copy()
    if model.k:
        incr += np.einsum("dk,mik->mid", model.sigma, dW)
    if model.n_atoms:
        incr += np.einsum("jd,mij->mid", model.marks, counts - lam_dt[None])
    X = np.zeros((paths.size, N + 1, model.d))
    np.cumsum(incr, axis=1, out=X[:, 1:])
    return dW, counts, X


def simulate_forward(
    model: LevyModel, grid: TimeGrid, M: int, seed: int, threads: int | None = 1
) -> PathEnsemble:
    """Simulate ``M`` forward paths on ``grid``.

    Paths are generated in independent chunks; the result does not depend on
    ``threads`` because every draw is keyed by (seed, path, step, stream).
    """
    if int(M) < 1:
        raise ValidationError(f"path count M must be >= 1, got {M}")
    if not 0 <= int(seed) < 2**64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    M, seed = int(M), int(seed)
    threads = max(1, int(threads or 1))
    bounds = np.linspace(0, M, min(threads, M) + 1).astype(int)
    chunks = [np.arange(lo, hi, dtype=np.uint64) for lo, hi in zip(bounds[:-1], bounds[1:])]
    if len(chunks) == 1:
        parts = [_simulate_chunk(model, grid, seed, chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda p: _simulate_chunk(model, grid, seed, p), chunks))
    dW, counts, X = (np.concatenate([p[i] for p in parts]) for i in range(3))
    for arr in (dW, counts, X):
        arr.setflags(write=False)
    return PathEnsemble(model, grid, seed, dW, counts, X)


def brownian_model(d: int = 1, scale: float = 1.0) -> LevyModel:
    """Pure Brownian model X = scale * W in d dimensions."""
    return LevyModel(d, d, np.zeros(d), scale * np.eye(d))


def noiseless_model(d: int = 1, drift: float = 0.0) -> LevyModel:
    return LevyModel(d, 0, np.full(d, drift), np.zeros((d, 0)))


def standard_error(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
