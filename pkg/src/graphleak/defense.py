"""Edge-privacy bounds for noisy aggregation and randomized response, plus
a Monte-Carlo estimate of the best threshold test's per-edge error.

Both closed forms have the shape ``1 - sqrt(1 - e)`` with ``e`` in
``[0, 1]``; they are evaluated as ``e / (1 + sqrt(1 - e))`` which avoids
cancellation when ``e`` is tiny.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attack import SimilarityKind, corr_sim, cos_sim
from .encoders import Arch, EncoderWeights, Mode, NagConfig, encode, operator_norm
from .generators import bernoulli_indices, pair_from_index
from .graph import Graph
from .rng import SeedLike, stream

MAX_DENSE_NODES = 20_000

ARCH_CONSTANT = {
    Arch.GCN: 1.0,
    Arch.MEAN_SAGE: 1.0,
    Arch.GIN: 1.0,
    Arch.GAT: 4.0,
    Arch.MAX_SAGE: 4.0,
}


class DefenseError(ValueError):
    pass


def _one_minus_sqrt_one_minus(e: float) -> float:
    return e / (1.0 + math.sqrt(1.0 - e))


@dataclass(frozen=True)
class BoundReport:
    bound: float
    C: float
    opnorm_sq: float
    sigma: float
    vacuous: bool = False


def nag_bound(weights: EncoderWeights | list, sigma: float, arch) -> BoundReport:
    """Lower bound on any adversary's per-edge total error under NAG.

    Uses ``1 - sqrt(1 - exp(-C * S / sigma^2))`` where ``S`` sums squared
    operator norms of the encoder layers. ``sigma = 0`` gives the vacuous
    bound 0.
    """
    arch = Arch.parse(arch)
    if arch not in ARCH_CONSTANT:
        raise DefenseError(f"{arch.value} has no noisy-aggregation mode")
    if sigma < 0:
        raise DefenseError("sigma must be >= 0")
    layers = weights.layers if isinstance(weights, EncoderWeights) else weights
    S = float(sum(operator_norm(W) ** 2 for W in layers))
    C = ARCH_CONSTANT[arch]
    if sigma == 0:
        return BoundReport(0.0, C, S, 0.0, vacuous=True)
    return BoundReport(_one_minus_sqrt_one_minus(math.exp(-C * S / sigma**2)), C, S, float(sigma))


def edge_rr_bound(epsilon: float) -> float:
    if epsilon < 0:
        raise DefenseError("epsilon must be >= 0")
    return _one_minus_sqrt_one_minus(math.exp(-epsilon))


def flip_probability(epsilon: float) -> float:
    # 1 / (1 + e^eps), written to stay finite for large eps
    return math.exp(-epsilon) / (1.0 + math.exp(-epsilon))


def edge_rr(g: Graph, epsilon: float, seed: SeedLike) -> np.ndarray:
    """Randomized response on every unordered pair; dense symmetric int8."""
    if epsilon < 0:
        raise DefenseError("epsilon must be >= 0")
    n = g.node_count
    if n > MAX_DENSE_NODES:
        raise DefenseError(f"n={n} exceeds the dense limit of {MAX_DENSE_NODES}")
    A = g.to_dense()
    rng = stream(seed, "edge-rr") if not isinstance(seed, np.random.Generator) else seed
    k = bernoulli_indices(rng, n * (n - 1) // 2, flip_probability(epsilon))
    u, v = pair_from_index(n, k)
    A[u, v] ^= 1
    A[v, u] ^= 1
    return A


def densify(g: Graph) -> np.ndarray:
    return g.to_dense()


def sparsify(A: np.ndarray) -> Graph:
    return Graph.from_dense(A)


@dataclass(frozen=True)
class EncoderSetup:
    """Everything needed to encode a graph apart from the noise seed."""

    X: np.ndarray
    weights: EncoderWeights
    arch: Arch
    cfg: NagConfig


def min_total_error(absent: np.ndarray, present: np.ndarray) -> float:
    """``min_tau`` of ``P(absent >= tau) + P(present < tau)`` over observed scores."""
    absent = np.sort(np.asarray(absent, dtype=np.float64))
    present = np.sort(np.asarray(present, dtype=np.float64))
    taus = np.r_[np.unique(np.r_[absent, present]), np.inf]
    fp = 1.0 - np.searchsorted(absent, taus, side="left") / len(absent)
    fn = np.searchsorted(present, taus, side="left") / len(present)
    return float(np.min(fp + fn))


def pair_scores(
    g: Graph, pair: tuple[int, int], setup: EncoderSetup, sim: SimilarityKind, trials: int, seed, world: str
) -> np.ndarray:
    u, v = pair
    fn = cos_sim if sim is SimilarityKind.COS else corr_sim
    out = np.empty(trials)
    for t in range(trials):
        H = encode(g, setup.X, setup.weights, setup.arch, setup.cfg, (seed, "trial", t, world))
        out[t] = fn(H[u], H[v])
    return out


def empirical_edge_error(
    g: Graph,
    pair: tuple[int, int],
    setup: EncoderSetup,
    sim: SimilarityKind | str = SimilarityKind.COS,
    trials: int = 1000,
    seed: int = 0,
    *,
    toggle: tuple[int, int] | None = None,
) -> float:
    """Monte-Carlo estimate of the best threshold test's total error on ``pair``.

    The graph is encoded ``trials`` times with the ``toggle`` edge (default
    ``pair`` itself) absent and ``trials`` times with it present, each with
    independent noise. The pair's similarity scores in the two worlds feed
    :func:`min_total_error`.
    """
    sim = SimilarityKind(sim.upper()) if isinstance(sim, str) else sim
    if trials < 100:
        raise DefenseError("trials must be >= 100")
    if setup.cfg.mode is not Mode.NAG or setup.cfg.sigma <= 0:
        raise DefenseError("empirical edge error needs NAG mode with sigma > 0")
    tu, tv = pair if toggle is None else toggle
    absent = g.with_edge(tu, tv, False)
    present = g.with_edge(tu, tv, True)
    s0 = pair_scores(absent, pair, setup, sim, trials, seed, "absent")
    s1 = pair_scores(present, pair, setup, sim, trials, seed, "present")
    return min_total_error(s0, s1)
