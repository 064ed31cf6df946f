"""Seeded random streams, Poisson variates and uniform index subsets."""

from __future__ import annotations

import zlib

import numpy as np
from scipy.special import gammaln

from .tensors import ContractError

# Below this mean, inversion by sequential search; at or above it, PTRS.
PTRS_THRESHOLD = 10.0


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named substream of ``seed``.

    ``stream(s, "omega", 3)`` and ``stream(s, "counts", 3)`` never share
    state, and neither depends on how many draws other streams consumed.
    """
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _poisson_inversion(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(lam.shape)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    todo = np.flatnonzero(u > cdf)
    step = 0
    while todo.size:
        step += 1
        p[todo] *= lam[todo] / step
        cdf[todo] += p[todo]
        k[todo] = step
        # p == 0 guards the (probability ~1e-16) case where rounding leaves cdf < u forever.
        todo = todo[(u[todo] > cdf[todo]) & (p[todo] > 0)]
    return k


def _poisson_ptrs(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Hormann's transformed rejection with squeeze, vectorized over pending draws."""
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    out = np.empty(lam.shape, dtype=np.int64)
    todo = np.arange(lam.size)
    while todo.size:
        U = rng.random(todo.size) - 0.5
        V = rng.random(todo.size)
        us = 0.5 - np.abs(U)
        at, bt, lt = a[todo], b[todo], lam[todo]
        k = np.floor((2.0 * at / us + bt) * U + lt + 0.43)
        quick = (us >= 0.07) & (V <= vr[todo])
        valid = (k >= 0) & ~((us < 0.013) & (V > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(V) + np.log(invalpha[todo]) - np.log(at / (us * us) + bt)
            rhs = -lt + k * loglam[todo] - gammaln(k + 1.0)
        ok = quick | (valid & (lhs <= rhs))
        out[todo[ok]] = k[ok].astype(np.int64)
        todo = todo[~ok]
    return out


def poisson_variates(lam, rng: np.random.Generator) -> np.ndarray:
    """One Poisson draw per entry of ``lam`` (all means must be positive)."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.size and not np.all(lam > 0):
        raise ContractError("Poisson means must be positive")
    flat = lam.ravel()
    out = np.empty(flat.shape, dtype=np.int64)
    small = flat < PTRS_THRESHOLD
    if small.any():
        out[small] = _poisson_inversion(flat[small], rng)
    if (~small).any():
        out[~small] = _poisson_ptrs(flat[~small], rng)
    return out.reshape(lam.shape)


def _first_distinct(total: int, size: int, rng: np.random.Generator) -> np.ndarray:
    # The first `size` distinct values of an i.i.d. uniform sequence form a
    # uniformly random `size`-subset (the law is invariant under relabeling).
    chosen = np.empty(0, dtype=np.int64)
    while len(chosen) < size:
        need = size - len(chosen)
        draws = rng.integers(0, total, size=need + need // 2 + 16, dtype=np.int64)
        seq = np.concatenate([chosen, draws])
        _, first = np.unique(seq, return_index=True)
        first.sort()
        chosen = seq[first[:size]]
    return chosen


def sample_subset(total: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted uniform random ``size``-subset of ``range(total)``."""
    total, size = int(total), int(size)
    if not 0 <= size <= total:
        raise ContractError(f"cannot draw {size} distinct indices from {total}")
    if 2 * size <= total:
        return np.sort(_first_distinct(total, size, rng))
    keep = np.ones(total, dtype=bool)
    keep[_first_distinct(total, total - size, rng)] = False
    return np.flatnonzero(keep).astype(np.int64)
