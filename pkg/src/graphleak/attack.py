"""Similarity-based edge reconstruction: pair scores, thresholded guesses,
error rates, AUROC and homophily measures.

The pair universe of a victim graph with ``n`` nodes is every unordered pair
``u < v`` (no self-pairs), enumerated row-major. A pair is guessed to be an
edge when its score is ``>= tau``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .generators import pair_from_index
from .graph import Graph
from .rng import SeedLike, as_generator

_TINY = 1e-300
_ROW_BLOCK = 1024


class AttackError(ValueError):
    pass


class SimilarityKind(enum.Enum):
    COS = "COS"
    CORR = "CORR"


@dataclass
class DegenerateCounter:
    """Pairs scored 0 because a vector had (centered) norm below 1e-300."""

    count: int = 0


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size == 0:
        raise AttackError(f"vectors must share a nonzero length, got {x.size} and {y.size}")
    return x, y


def cos_sim(x, y, counter: DegenerateCounter | None = None) -> float:
    x, y = _check_pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx < _TINY or ny < _TINY:
        if counter is not None:
            counter.count += 1
        return 0.0
    return float(np.clip((x @ y) / (nx * ny), -1.0, 1.0))


def corr_sim(x, y, counter: DegenerateCounter | None = None) -> float:
    x, y = _check_pair(x, y)
    if x.size <= 1:
        raise AttackError("correlation similarity needs dimension > 1")
    return cos_sim(x - x.mean(), y - y.mean(), counter)


@dataclass(frozen=True, eq=False)
class ScoreSet:
    pairs: np.ndarray  # (m, 2), u < v
    scores: np.ndarray
    truth: np.ndarray  # bool
    degenerate: int = 0

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        truth = np.asarray(self.truth, dtype=bool).ravel()
        if not (len(pairs) == len(scores) == len(truth)):
            raise AttackError("pairs, scores and truth must have equal length")
        if np.any(pairs[:, 0] >= pairs[:, 1]):
            raise AttackError("pairs must satisfy u < v (no self-pairs)")
        if not np.all(np.isfinite(scores)):
            raise AttackError("scores must be finite")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "truth", truth)

    @classmethod
    def from_arrays(cls, scores, truth) -> "ScoreSet":
        """Scores with synthetic pair ids, for metric-only use."""
        m = len(scores)
        return cls(np.stack([np.zeros(m, dtype=np.int64), np.arange(1, m + 1)], axis=1), scores, truth)

    @property
    def positives(self) -> int:
        return int(np.count_nonzero(self.truth))

    @property
    def negatives(self) -> int:
        return len(self.truth) - self.positives

    def __len__(self):
        return len(self.scores)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "score", "truth"])
            for (u, v), s, t in zip(self.pairs, self.scores, self.truth):
                w.writerow([u, v, repr(float(s)), int(t)])


def pair_truth(g: Graph) -> np.ndarray:
    """Adjacency bit of every ``u < v`` pair in row-major order."""
    n = g.node_count
    truth = np.zeros(n * (n - 1) // 2, dtype=bool)
    e = g.edge_array()
    if len(e):
        u, v = e[:, 0], e[:, 1]
        truth[u * n - u * (u + 1) // 2 + (v - u - 1)] = True
    return truth


def _unit_rows(H: np.ndarray, sim: SimilarityKind) -> tuple[np.ndarray, np.ndarray]:
    if sim is SimilarityKind.CORR:
        if H.shape[1] <= 1:
            raise AttackError("correlation similarity needs dimension > 1")
        H = H - H.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(H, axis=1)
    bad = norms < _TINY
    U = np.zeros_like(H)
    U[~bad] = H[~bad] / norms[~bad, None]
    return U, bad


def score_pairs(
    H: np.ndarray,
    g_victim: Graph,
    sim: SimilarityKind | str = SimilarityKind.COS,
    *,
    sample_pairs: int | None = None,
    seed: SeedLike = 0,
) -> ScoreSet:
    """Score every unordered pair of the victim graph.

    ``sample_pairs`` caps the number of pairs by uniform sampling without
    replacement; it is meant for very large victim graphs and is off by
    default.
    """
    sim = SimilarityKind(sim.upper()) if isinstance(sim, str) else sim
    H = np.asarray(H, dtype=np.float64)
    n = g_victim.node_count
    if H.ndim != 2 or H.shape[0] != n:
        raise AttackError(f"H has shape {H.shape}, victim graph has {n} nodes")
    U, bad = _unit_rows(H, sim)
    truth = pair_truth(g_victim)
    total = len(truth)

    if sample_pairs is not None and sample_pairs < total:
        rng = as_generator(seed, "pair-sample")
        k = np.sort(rng.choice(total, size=sample_pairs, replace=False))
        u, v = pair_from_index(n, k)
        scores = np.einsum("ij,ij->i", U[u], U[v])
        truth = truth[k]
    else:
        u, v = np.triu_indices(n, 1)
        scores = np.empty(total)
        pos = 0
        for start in range(0, n, _ROW_BLOCK):
            stop = min(n, start + _ROW_BLOCK)
            block = U[start:stop] @ U[start:].T
            for r in range(stop - start):
                row = block[r, r + 1 :]
                scores[pos : pos + len(row)] = row
                pos += len(row)
    np.clip(scores, -1.0, 1.0, out=scores)
    degenerate = int(np.count_nonzero(bad[u] | bad[v]))
    return ScoreSet(np.stack([u, v], axis=1), scores, truth, degenerate)


def feature_baseline(X: np.ndarray, g_victim: Graph) -> ScoreSet:
    """Cosine similarity of raw features as the edge score."""
    return score_pairs(X, g_victim, SimilarityKind.COS)


def classify(s: ScoreSet, tau: float) -> np.ndarray:
    return s.scores >= tau


@dataclass(frozen=True)
class AttackMetrics:
    fpr: float
    fnr: float
    err: float
    threshold: float
    auroc: float | None = None
    undefined: tuple[str, ...] = field(default=())


def rates(s: ScoreSet, tau: float) -> AttackMetrics:
    """FPR, FNR and ERR at threshold ``tau``.

    A rate whose denominator is zero (no negatives or no positives) is NaN
    and named in ``undefined``.
    """
    guess = s.scores >= tau
    pos, neg = s.positives, s.negatives
    fp = int(np.count_nonzero(guess & ~s.truth))
    fn = int(np.count_nonzero(~guess & s.truth))
    undefined = []
    if neg:
        fpr = fp / neg
    else:
        fpr = math.nan
        undefined.append("fpr")
    if pos:
        fnr = fn / pos
    else:
        fnr = math.nan
        undefined.append("fnr")
    return AttackMetrics(fpr, fnr, fpr + fnr, float(tau), undefined=tuple(undefined))


def auroc(s: ScoreSet) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos, neg = s.positives, s.negatives
    if pos == 0 or neg == 0:
        raise AttackError("AUROC undefined without both positive and negative pairs")
    ranks = rankdata(s.scores, method="average")
    rank_sum = float(ranks[s.truth].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def best_threshold(s: ScoreSet) -> tuple[float, AttackMetrics]:
    """Exact ERR minimizer over the distinct scores and ``+inf``.

    Ties go to the largest threshold. Comparisons use the integer form
    ``FP * P + FN * N`` so equal error rates compare equal.
    """
    pos, neg = s.positives, s.negatives
    if pos == 0 or neg == 0:
        return math.inf, rates(s, math.inf)
    order = np.argsort(-s.scores, kind="stable")
    sorted_scores = s.scores[order]
    sorted_truth = s.truth[order]
    tp = np.cumsum(sorted_truth)
    fp = np.cumsum(~sorted_truth)
    # last index of each run of equal scores: guesses at tau = that score
    last = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    thresholds = np.r_[math.inf, sorted_scores[last]]
    fp_at = np.r_[0, fp[last]].astype(np.int64)
    fn_at = np.r_[pos, pos - tp[last]].astype(np.int64)
    scaled = fp_at * pos + fn_at * neg
    # thresholds are descending, so the first minimum is the largest tau
    best = int(np.argmin(scaled))
    tau = float(thresholds[best])
    m = rates(s, tau)
    return tau, m


def evaluate(s: ScoreSet) -> AttackMetrics:
    """Best-threshold rates together with AUROC."""
    tau, m = best_threshold(s)
    return AttackMetrics(m.fpr, m.fnr, m.err, tau, auroc(s), m.undefined)


def _edges_or_raise(g: Graph) -> np.ndarray:
    e = g.edge_array()
    if len(e) == 0:
        raise AttackError("homophily undefined on a graph without edges")
    return e


def label_homophily(g: Graph, Y) -> float:
    e = _edges_or_raise(g)
    Y = np.asarray(Y)
    return float(np.mean(Y[e[:, 0]] == Y[e[:, 1]]))


def feature_homophily(g: Graph, X) -> float:
    e = _edges_or_raise(g)
    U, _ = _unit_rows(np.asarray(X, dtype=np.float64), SimilarityKind.COS)
    return float(np.mean(np.einsum("ij,ij->i", U[e[:, 0]], U[e[:, 1]])))
