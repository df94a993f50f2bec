"""Random graph and feature synthesis.

Sparse edge probabilities are sampled by geometric skipping over the linear
index of the ``C(n, 2)`` unordered pairs, so an ER graph with ``p = log n / n``
costs O(|E|) draws rather than O(n^2). Dense probabilities fall back to one
uniform per pair. Both paths produce independent Bernoulli(p) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .rng import SeedLike, as_generator

# below this probability geometric skipping beats one uniform per pair
_SKIP_BELOW = 0.1
_CHUNK = 1 << 22


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ErSpec:
    n: int
    p: float

    def __post_init__(self):
        if self.n < 1:
            raise SpecError("n must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise SpecError(f"p={self.p} outside [0, 1]")

    @classmethod
    def sparse(cls, n: int) -> "ErSpec":
        """The ``p = log n / n`` regime."""
        return cls(n, math.log(n) / n)


@dataclass(frozen=True)
class SbmSpec:
    n: int
    K: int
    p: float
    q: float

    def __post_init__(self):
        if self.n < 1 or self.K < 1:
            raise SpecError("n and K must be >= 1")
        if self.n % self.K:
            raise SpecError(f"K={self.K} does not divide n={self.n}")
        for name in ("p", "q"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecError(f"{name}={getattr(self, name)} outside [0, 1]")

    def membership(self) -> np.ndarray:
        return np.arange(self.n) * self.K // self.n


def bernoulli_indices(rng: np.random.Generator, total: int, p: float) -> np.ndarray:
    """Sorted indices in ``[0, total)`` each kept independently with prob ``p``."""
    if total <= 0 or p <= 0.0:
        return np.zeros(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(total, dtype=np.int64)
    out = []
    if p < _SKIP_BELOW:
        pos = -1
        batch = max(16, int(total * p * 1.1) + 16)
        log_q = math.log1p(-p)
        while True:
            # inverse-CDF geometric gaps in floating point, capped so that
            # tiny p cannot overflow the integer cumsum
            gaps = np.floor(np.log1p(-rng.random(batch)) / log_q) + 1.0
            gaps = np.minimum(gaps, float(total + 1)).astype(np.int64)
            hits = pos + np.cumsum(gaps)
            out.append(hits[hits < total])
            if hits[-1] >= total:
                break
            pos = int(hits[-1])
    else:
        for start in range(0, total, _CHUNK):
            stop = min(total, start + _CHUNK)
            out.append(start + np.flatnonzero(rng.random(stop - start) < p))
    return np.concatenate(out).astype(np.int64)


def pair_from_index(n: int, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices of the row-major ``u < v`` enumeration to pairs."""
    k = np.asarray(k, dtype=np.int64)
    u_all = np.arange(n, dtype=np.int64)
    offsets = u_all * n - u_all * (u_all + 1) // 2
    u = np.searchsorted(offsets, k, side="right") - 1
    v = k - offsets[u] + u + 1
    return u, v


def _triangle(rng, n, p, base=0):
    k = bernoulli_indices(rng, n * (n - 1) // 2, p)
    u, v = pair_from_index(n, k)
    return u + base, v + base


def gen_er(spec: ErSpec, seed: SeedLike) -> Graph:
    rng = as_generator(seed, "er")
    u, v = _triangle(rng, spec.n, spec.p)
    return Graph._from_unique_pairs(spec.n, u, v)


def gen_sbm(spec: SbmSpec, seed: SeedLike) -> tuple[Graph, np.ndarray]:
    """SBM with contiguous equal-size groups; returns ``(graph, membership)``."""
    rng = as_generator(seed, "sbm")
    m = spec.n // spec.K
    lo, hi = [], []
    for a in range(spec.K):
        u, v = _triangle(rng, m, spec.p, base=a * m)
        lo.append(u)
        hi.append(v)
        for b in range(a + 1, spec.K):
            k = bernoulli_indices(rng, m * m, spec.q)
            lo.append(a * m + k // m)
            hi.append(b * m + k % m)
    g = Graph._from_unique_pairs(spec.n, np.concatenate(lo), np.concatenate(hi))
    return g, spec.membership()


def gen_inhomogeneous(P: np.ndarray, seed: SeedLike) -> Graph:
    """Pair ``{u, v}`` present with probability ``P[u, v]`` (upper triangle read)."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise SpecError("P must be square")
    n = P.shape[0]
    iu, iv = np.triu_indices(n, 1)
    probs = P[iu, iv]
    if probs.size and (np.any(~np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1):
        raise SpecError("P has entries outside [0, 1]")
    rng = as_generator(seed, "inhomogeneous")
    keep = rng.random(len(probs)) < probs
    return Graph._from_unique_pairs(n, iu[keep].astype(np.int64), iv[keep].astype(np.int64))


def sbm_probability_matrix(spec: SbmSpec) -> np.ndarray:
    k = spec.membership()
    P = np.where(k[:, None] == k[None, :], spec.p, spec.q)
    np.fill_diagonal(P, 0.0)
    return P


def gen_features(n: int, d: int, seed: SeedLike) -> np.ndarray:
    """I.i.d. standard normal ``n x d`` feature matrix."""
    if n < 1 or d < 1:
        raise SpecError("n and d must be >= 1")
    return as_generator(seed, "features").standard_normal((n, d))
