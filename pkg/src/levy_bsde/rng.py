"""Counter-based random streams (Philox4x64-10) for order-independent sampling.

Every draw is a pure function of ``(seed, path, step, stream, lane)``, so any
subset of paths can be generated in any order, or in parallel, and still
reproduce the same ensemble bit for bit.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

ROUNDS = 10

# stream tags (third counter word)
BROWNIAN = 0
POISSON = 1
PERTURBATION = 2


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full 64x64 -> 128 bit product, returned as (hi, lo) words."""
    a_lo, a_hi = a & _MASK32, a >> _S32
    b_lo, b_hi = b & _MASK32, b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _MASK32) + (p2 & _MASK32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter, key) -> np.ndarray:
    """Apply the Philox4x64-10 bijection.

    Parameters
    ----------
    counter : array_like of uint64, shape (..., 4)
    key : array_like of uint64, shape (2,)

    Returns
    -------
    ndarray of uint64, shape (..., 4)
    """
    ctr = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0, k1 = (np.uint64(int(w)) for w in np.asarray(key, dtype=np.uint64))
    with np.errstate(over="ignore"):
        for r in range(ROUNDS):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def raw_words(seed: int, paths: np.ndarray, n_steps: int, stream: int, width: int) -> np.ndarray:
    """Raw uint64 words of shape (len(paths), n_steps, width).

    Lane ``j`` of step ``i`` on path ``m`` is word ``j % 4`` of the block at
    counter ``(m, i, stream, j // 4)``.
    """
    paths = np.asarray(paths, dtype=np.uint64)
    n_blocks = -(-width // 4)
    if width == 0 or paths.size == 0:
        return np.zeros((paths.size, n_steps, width), dtype=np.uint64)
    ctr = np.empty((paths.size, n_steps, n_blocks, 4), dtype=np.uint64)
    ctr[..., 0] = paths[:, None, None]
    ctr[..., 1] = np.arange(n_steps, dtype=np.uint64)[None, :, None]
    ctr[..., 2] = np.uint64(stream)
    ctr[..., 3] = np.arange(n_blocks, dtype=np.uint64)[None, None, :]
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
    out = philox4x64(ctr, key).reshape(paths.size, n_steps, n_blocks * 4)
    return out[..., :width]


def to_unit_open(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles strictly inside (0, 1).

    The top 52 bits are used so that k + 1/2 stays exactly representable.
    """
    return ((words >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


def normals(seed: int, paths, n_steps: int, stream: int, width: int) -> np.ndarray:
    return ndtri(to_unit_open(raw_words(seed, paths, n_steps, stream, width)))


def poisson_inversion(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Poisson(lam) variates from uniforms by sequential CDF inversion.

    ``lam`` broadcasts against ``u``.  Exact up to floating-point CDF
    accumulation; intended for the small means of desk-scale grids.
    """
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), u.shape)
    k = np.zeros(u.shape, dtype=np.int64)
    pmf = np.exp(-lam)
    cdf = pmf.copy()
    active = u > cdf
    kk = 0
    # upper cap far in the tail of any mean used here
    cap = int(np.max(lam, initial=0.0) + 40.0 * np.sqrt(np.max(lam, initial=0.0)) + 100)
    while active.any() and kk < cap:
        kk += 1
        pmf = pmf * lam / kk
        cdf = cdf + pmf
        k[active] = kk
        active &= u > cdf
    return k


def poissons(seed: int, paths, n_steps: int, stream: int, lam: np.ndarray) -> np.ndarray:
    """Poisson counts of shape (len(paths), n_steps, len(lam_row)).

    ``lam`` has shape (n_steps, width): the mean per step and lane.
    """
    lam = np.asarray(lam, dtype=np.float64)
    u = to_unit_open(raw_words(seed, paths, n_steps, stream, lam.shape[-1]))
    return poisson_inversion(u, lam[None, :, :])
