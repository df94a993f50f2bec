"""Node encoders: the linear GNN, five message-passing layers and their
noisy-aggregation (NAG) variant, plus spectral utilities for weights.

Matrices act on row vectors: a layer computes ``Z = H_hat @ W`` so a weight
of shape ``(d_in, d_out)`` maps ``d_in`` features to ``d_out``. Singular
values are unaffected by this choice.

In NAG mode each input row is scaled to unit norm before the weight is
applied and ``N(0, sigma^2 I)`` noise is added to every aggregate before the
activation. STANDARD mode skips both. Self-loops are implicit: every node
aggregates over its neighbors plus itself.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .rng import SeedLike, as_generator, stream


class Arch(enum.Enum):
    LINEAR = "LINEAR"
    GCN = "GCN"
    MEAN_SAGE = "MEAN_SAGE"
    MAX_SAGE = "MAX_SAGE"
    GIN = "GIN"
    GAT = "GAT"

    @classmethod
    def parse(cls, name: "str | Arch") -> "Arch":
        if isinstance(name, Arch):
            return name
        aliases = {"LIN": "LINEAR", "SAGE": "MEAN_SAGE", "MEAN": "MEAN_SAGE", "MAX": "MAX_SAGE"}
        key = name.strip().upper().replace("-", "_")
        return cls(aliases.get(key, key))


class Activation(enum.Enum):
    RELU = "RELU"
    IDENTITY = "IDENTITY"


class Mode(enum.Enum):
    STANDARD = "STANDARD"
    NAG = "NAG"


class EncoderError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    def __init__(self, message, last_estimate, last_vector):
        super().__init__(message)
        self.last_estimate = last_estimate
        self.last_vector = last_vector


@dataclass(frozen=True)
class NagConfig:
    """Layer configuration.

    ``activation`` applies after every hidden layer and ``final_activation``
    after the last one. ``sigma`` is ignored in STANDARD mode.
    """

    sigma: float = 0.0
    activation: Activation = Activation.RELU
    final_activation: Activation = Activation.IDENTITY
    norm_epsilon: float = 1e-12
    mode: Mode = Mode.STANDARD
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.sigma < 0:
            raise EncoderError("sigma must be >= 0")
        if self.norm_epsilon <= 0:
            raise EncoderError("norm_epsilon must be > 0")

    @classmethod
    def nag(cls, sigma: float, **kw) -> "NagConfig":
        return cls(sigma=sigma, mode=Mode.NAG, **kw)


@dataclass
class EncoderWeights:
    """Per-layer weights.

    LINEAR keeps a single effective matrix in ``layers`` and the number of
    propagation steps in ``depth``. Message-passing encoders have one
    matrix per layer; GAT also carries per-layer attention vectors.
    """

    layers: list[np.ndarray]
    beta_src: list[np.ndarray] | None = None
    beta_dst: list[np.ndarray] | None = None
    depth: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise EncoderError("at least one weight matrix required")
        self.layers = [np.asarray(w, dtype=np.float64) for w in self.layers]
        for i, w in enumerate(self.layers):
            if w.ndim != 2 or not np.all(np.isfinite(w)):
                raise EncoderError(f"layer {i}: weights must be a finite 2-D matrix")
            if i and w.shape[0] != self.layers[i - 1].shape[1]:
                raise EncoderError(f"layer {i}: input dim {w.shape[0]} != {self.layers[i - 1].shape[1]}")
        if self.beta_src is not None:
            self.beta_src = [np.asarray(b, dtype=np.float64) for b in self.beta_src]
            self.beta_dst = [np.asarray(b, dtype=np.float64) for b in self.beta_dst]

    @property
    def num_layers(self) -> int:
        return self.depth if self.depth is not None else len(self.layers)

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(
            [w.copy() for w in self.layers],
            None if self.beta_src is None else [b.copy() for b in self.beta_src],
            None if self.beta_dst is None else [b.copy() for b in self.beta_dst],
            self.depth,
        )


@dataclass
class Diagnostics:
    """Counts rows that were too small to normalize in NAG mode."""

    unnormalized_rows: int = 0
    per_layer: list[int] = field(default_factory=list)


# ---------------------------------------------------------------- structure


@dataclass
class _Structure:
    indptr: np.ndarray  # CSR over N(v) + {v}; row = receiving node v
    sources: np.ndarray  # sending node u per entry
    targets: np.ndarray  # receiving node v per entry
    deg: np.ndarray  # degree without the self-loop
    weights: dict  # arch -> aggregation coefficients per entry
    mats: dict = field(default_factory=dict)

    def matrix(self, data) -> sp.csr_matrix:
        n = len(self.deg)
        return sp.csr_matrix((data, self.sources, self.indptr), shape=(n, n))


def _structure(g: Graph) -> _Structure:
    cached = g.__dict__.get("_mp_structure")
    if cached is not None:
        return cached
    a = g.adjacency(self_loops=True)
    n = g.node_count
    deg = g.degrees().astype(np.float64)
    targets = np.repeat(np.arange(n), np.diff(a.indptr))
    sources = a.indices.astype(np.int64)
    tilde = deg + 1.0
    weights = {
        Arch.MEAN_SAGE: 1.0 / tilde[targets],
        Arch.GIN: np.ones(len(sources)),
        Arch.GCN: 1.0 / np.sqrt(tilde[targets] * tilde[sources]),
    }
    s = _Structure(a.indptr.astype(np.int64), sources, targets, deg, weights)
    # Graph is immutable, so the structure can live on the instance
    g.__dict__["_mp_structure"] = s
    return s


def _agg_matrix(s: _Structure, arch: Arch) -> sp.csr_matrix:
    mats = s.mats
    if arch not in mats:
        mats[arch] = s.matrix(s.weights[arch])
    return mats[arch]


def propagation_matrix(g: Graph) -> sp.csr_matrix:
    """Row-stochastic ``(D + I)^{-1} (A + I)``."""
    return _agg_matrix(_structure(g), Arch.MEAN_SAGE)


def _segment_max(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(values, indptr[:-1], axis=0)


# ---------------------------------------------------------------- forward


def encode_linear(g: Graph, X: np.ndarray, W: np.ndarray, L: int) -> np.ndarray:
    """``((D + I)^{-1} (A + I))^L X W`` via ``L`` sparse propagations."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if L < 1:
        raise EncoderError("L must be >= 1")
    if X.shape[0] != g.node_count or X.shape[1] != W.shape[0]:
        raise EncoderError(f"dimension mismatch: X {X.shape}, W {W.shape}, n={g.node_count}")
    P = propagation_matrix(g)
    H = X
    for _ in range(L):
        H = P @ H
    return H @ W


def _act(x: np.ndarray, act: Activation) -> np.ndarray:
    return np.maximum(x, 0.0) if act is Activation.RELU else x


def normalize_rows(H: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit-norm rows; rows with norm below ``eps`` pass through unchanged."""
    norms = np.linalg.norm(H, axis=1)
    ok = norms >= eps
    out = H.copy()
    out[ok] /= norms[ok, None]
    return out, norms, ok


def _layer_forward(
    g: Graph,
    H: np.ndarray,
    W: np.ndarray,
    arch: Arch,
    cfg: NagConfig,
    act: Activation,
    beta_src=None,
    beta_dst=None,
    noise: np.ndarray | None = None,
    keep_cache: bool = False,
):
    if arch is Arch.LINEAR:
        raise EncoderError("LINEAR has no message-passing layer; use encode_linear")
    if H.shape[0] != g.node_count:
        raise EncoderError(f"H has {H.shape[0]} rows, graph has {g.node_count} nodes")
    if H.shape[1] != W.shape[0]:
        raise EncoderError(f"H width {H.shape[1]} != W rows {W.shape[0]}")
    if arch is Arch.GAT:
        if beta_src is None or beta_dst is None:
            raise EncoderError("GAT requires beta_src and beta_dst")
        if beta_src.shape != (W.shape[1],) or beta_dst.shape != (W.shape[1],):
            raise EncoderError("attention vectors must match the layer output width")

    cache = {}
    if cfg.mode is Mode.NAG:
        Hn, norms, ok = normalize_rows(H, cfg.norm_epsilon)
        cache.update(norms=norms, ok=ok)
    else:
        Hn = H
    Z = Hn @ W
    s = _structure(g)

    if arch in (Arch.MEAN_SAGE, Arch.GIN, Arch.GCN):
        M = _agg_matrix(s, arch) @ Z
    elif arch is Arch.MAX_SAGE:
        gathered = Z[s.sources]
        M = _segment_max(gathered, s.indptr)
        if keep_cache:
            nnz = len(s.sources)
            pos = np.where(gathered == M[s.targets], np.arange(nnz)[:, None], nnz)
            first = np.minimum.reduceat(pos, s.indptr[:-1], axis=0)
            cache["argmax"] = s.sources[first]
    else:
        src_score = Z @ beta_src
        dst_score = Z @ beta_dst
        x = src_score[s.sources] + dst_score[s.targets]
        e = np.where(x > 0, x, cfg.negative_slope * x)
        e = e - _segment_max(e, s.indptr)[s.targets]
        ex = np.exp(e)
        alpha = ex / np.add.reduceat(ex, s.indptr[:-1])[s.targets]
        M = s.matrix(alpha) @ Z
        cache.update(alpha=alpha, x=x)

    pre = M if noise is None else M + noise
    out = _act(pre, act)
    if keep_cache:
        cache.update(Hn=Hn, Z=Z, pre=pre, act=act)
    return out, cache


def mp_layer(
    g: Graph,
    H_in: np.ndarray,
    W_l: np.ndarray,
    arch: Arch,
    cfg: NagConfig,
    beta_src=None,
    beta_dst=None,
    rng: SeedLike | None = None,
    *,
    activation: Activation | None = None,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """One message-passing layer; noise is drawn from ``rng`` in NAG mode."""
    arch = Arch.parse(arch)
    H_in = np.asarray(H_in, dtype=np.float64)
    W_l = np.asarray(W_l, dtype=np.float64)
    noise = None
    if cfg.mode is Mode.NAG and cfg.sigma > 0:
        gen = as_generator(0 if rng is None else rng, "mp-layer")
        noise = cfg.sigma * gen.standard_normal((g.node_count, W_l.shape[1]))
    out, cache = _layer_forward(
        g, H_in, W_l, arch, cfg, activation or cfg.activation, beta_src, beta_dst, noise
    )
    if diagnostics is not None and "ok" in cache:
        bad = int(np.count_nonzero(~cache["ok"]))
        diagnostics.unnormalized_rows += bad
        diagnostics.per_layer.append(bad)
    return out


def layer_noise(seed: SeedLike, layer: int, n: int, d: int, sigma: float) -> np.ndarray:
    """Noise for ``layer``; row ``v`` is node ``v``'s draw."""
    gen = seed if isinstance(seed, np.random.Generator) else stream(seed, "nag-noise", layer)
    return sigma * gen.standard_normal((n, d))


def encode_layers(g, X, weights: EncoderWeights, arch: Arch, cfg: NagConfig, seed: SeedLike, keep_cache=False):
    """Stacked forward pass returning ``(H, per-layer caches, diagnostics)``."""
    arch = Arch.parse(arch)
    X = np.asarray(X, dtype=np.float64)
    diag = Diagnostics()
    if arch is Arch.LINEAR:
        if cfg.mode is Mode.NAG:
            raise EncoderError("LINEAR supports only STANDARD mode")
        return encode_linear(g, X, weights.layers[0], weights.num_layers), [], diag
    L = len(weights.layers)
    caches = []
    H = X
    for l, W in enumerate(weights.layers):
        noise = None
        if cfg.mode is Mode.NAG and cfg.sigma > 0:
            noise = layer_noise(seed, l, g.node_count, W.shape[1], cfg.sigma)
        act = cfg.final_activation if l == L - 1 else cfg.activation
        bs = weights.beta_src[l] if weights.beta_src is not None else None
        bd = weights.beta_dst[l] if weights.beta_dst is not None else None
        H_next, cache = _layer_forward(g, H, W, arch, cfg, act, bs, bd, noise, keep_cache)
        if "ok" in cache:
            bad = int(np.count_nonzero(~cache["ok"]))
            diag.unnormalized_rows += bad
            diag.per_layer.append(bad)
        if keep_cache:
            cache["H_in"] = H
            caches.append(cache)
        H = H_next
    return H, caches, diag


def encode(
    g: Graph,
    X: np.ndarray,
    weights: EncoderWeights,
    arch: Arch,
    cfg: NagConfig,
    seed: SeedLike = 0,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """Node representations after all layers, deterministic given ``seed``."""
    H, _, diag = encode_layers(g, X, weights, arch, cfg, seed)
    if diagnostics is not None:
        diagnostics.unnormalized_rows += diag.unnormalized_rows
        diagnostics.per_layer.extend(diag.per_layer)
    return H


# ---------------------------------------------------------------- spectra

_BLOCK = 16


def _gram(W: np.ndarray) -> tuple[np.ndarray, bool]:
    if W.shape[1] <= W.shape[0]:
        return W.T @ W, True
    return W @ W.T, False


def _power_iteration(G: np.ndarray, max_iter: int, tol: float) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of the PSD matrix ``G`` by block power iteration.

    A block of up to 16 vectors is multiplied by ``G`` and re-orthonormalized
    each step; a Rayleigh-Ritz projection extracts the top Ritz pair. The
    block makes convergence depend on the gap to the 17th eigenvalue rather
    than the 2nd, which matters for random square weights whose leading
    singular values crowd together. Stops when the top Rayleigh quotient
    changes by at most ``tol`` (relative) between steps.
    """
    k = G.shape[0]
    b = min(k, _BLOCK)
    Q, _ = np.linalg.qr(stream("power-iteration-start", k).standard_normal((k, b)))
    Y = G @ Q
    old = None
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(Y)
        Y = G @ Q
        theta, S = np.linalg.eigh(Q.T @ Y)
        S = S[:, ::-1]
        Q = Q @ S
        Y = Y @ S
        rho = float(theta[-1])
        if old is not None and abs(rho - old) <= tol * rho:
            return rho, Q[:, 0]
        old = rho
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", np.sqrt(max(rho, 0.0)), Q[:, 0])


def operator_norm(W: np.ndarray, max_iter: int = 200, tol: float = 1e-9) -> float:
    """Largest singular value by power iteration on the Gram matrix."""
    W = np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise EncoderError("weights must be finite")
    if W.size == 0 or not np.any(W):
        return 0.0
    G, _ = _gram(W)
    rho, _ = _power_iteration(G, max_iter, tol)
    return float(np.sqrt(rho))


def top_singular_vectors(W: np.ndarray, max_iter: int = 200, tol: float = 1e-9):
    """``(sigma, u, v)`` with ``W v = sigma u`` for the top singular pair."""
    W = np.asarray(W, dtype=np.float64)
    G, right = _gram(W)
    rho, x = _power_iteration(G, max_iter, tol)
    s = float(np.sqrt(rho))
    if right:
        v = x
        u = W @ v / s
    else:
        u = x
        v = W.T @ u / s
    return s, u, v


def jacobi_singular_values(W: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Singular values by one-sided (Hestenes) Jacobi rotations, descending.

    Meant for small matrices (d <= 16): it orthogonalizes the columns
    pairwise until every pair is orthogonal to ``tol`` relative precision.
    """
    A = np.array(W, dtype=np.float64)
    if A.shape[0] < A.shape[1]:
        A = A.T.copy()
    n = A.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = A[:, i] @ A[:, i]
                b = A[:, j] @ A[:, j]
                c = A[:, i] @ A[:, j]
                if abs(c) <= tol * np.sqrt(a * b) or c == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    zeta = (b - a) / (2.0 * c)
                if abs(zeta) > 1e150:
                    # tan of the rotation angle is ~1/(2 zeta); zero means no rotation
                    t = 0.5 / zeta
                    if t == 0.0:
                        continue
                else:
                    t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                rotated = True
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                ai = A[:, i].copy()
                A[:, i] = cs * ai - sn * A[:, j]
                A[:, j] = sn * ai + cs * A[:, j]
        if not rotated:
            break
    return np.sort(np.linalg.norm(A, axis=0))[::-1]


def singular_values(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if max(W.shape) <= 16:
        return jacobi_singular_values(W)
    return np.linalg.svd(W, compute_uv=False)


def condition_number(W: np.ndarray) -> float:
    """Largest over smallest singular value; ``inf`` when numerically singular."""
    s = singular_values(W)
    if s[0] == 0.0 or s[-1] < 1e-12 * s[0]:
        return float("inf")
    return float(s[0] / s[-1])


@dataclass
class SpectralNormState:
    """Persistent left singular vector estimate, warm-started across calls."""

    u: np.ndarray

    @classmethod
    def random(cls, rows: int, seed: SeedLike = 0) -> "SpectralNormState":
        u = as_generator(seed, "spectral-norm").standard_normal(rows)
        return cls(u / np.linalg.norm(u))

    @classmethod
    def converged(cls, W: np.ndarray) -> "SpectralNormState":
        _, u, _ = top_singular_vectors(W)
        return cls(u)


def spectral_normalize(
    W: np.ndarray, state: SpectralNormState | None = None, n_iter: int = 1
) -> tuple[np.ndarray, SpectralNormState]:
    """Divide ``W`` by a power-iteration estimate of its top singular value.

    ``n_iter`` iterations (default one) refine ``state.u`` in place, so
    repeated calls on slowly changing weights keep tightening the estimate.
    """
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W):
        raise EncoderError("cannot spectrally normalize a zero matrix")
    if state is None:
        state = SpectralNormState.random(W.shape[0])
    u = state.u
    for _ in range(n_iter):
        v = W.T @ u
        v /= np.linalg.norm(v)
        u = W @ v
        nu = np.linalg.norm(u)
        u = u / nu
    sigma = float(u @ W @ v)
    state.u = u
    return W / sigma, state


# ---------------------------------------------------------------- init


class InitScheme(enum.Enum):
    IDENTITY = "IDENTITY"
    HE = "HE"
    PRODUCT = "PRODUCT"


def _he(rng, rows, cols):
    return rng.normal(0.0, np.sqrt(2.0 / rows), size=(rows, cols))


def init_weights(
    d: int,
    L: int,
    scheme: InitScheme | str,
    seed: SeedLike,
    arch: Arch | str,
    d_in: int | None = None,
) -> EncoderWeights:
    """Initial weights.

    HE draws entries from ``N(0, 2 / fan_in)``; with ``d_in == d`` that is
    the ``sqrt(2/d)`` standard deviation. PRODUCT (LINEAR only) multiplies
    ``L`` HE factors into one effective matrix. ``d_in`` defaults to ``d``
    and lets real features of another width enter the first layer.
    """
    scheme = InitScheme(scheme.upper()) if isinstance(scheme, str) else scheme
    arch = Arch.parse(arch)
    d_in = d if d_in is None else d_in
    if d < 1 or L < 1:
        raise EncoderError("d and L must be >= 1")
    if scheme is InitScheme.PRODUCT and arch is not Arch.LINEAR:
        raise EncoderError("PRODUCT initialization applies to LINEAR only")
    if scheme is InitScheme.IDENTITY and d_in != d:
        raise EncoderError("IDENTITY initialization needs d_in == d")
    rng = as_generator(seed, "init-weights")

    if arch is Arch.LINEAR:
        if scheme is InitScheme.IDENTITY:
            W = np.eye(d)
        elif scheme is InitScheme.HE:
            W = _he(rng, d_in, d)
        else:
            W = _he(rng, d_in, d)
            for _ in range(L - 1):
                W = W @ _he(rng, d, d)
        return EncoderWeights([W], depth=L)

    shapes = [(d_in, d)] + [(d, d)] * (L - 1)
    if scheme is InitScheme.IDENTITY:
        layers = [np.eye(d) for _ in range(L)]
    else:
        layers = [_he(rng, r, c) for r, c in shapes]
    beta_src = beta_dst = None
    if arch is Arch.GAT:
        if scheme is InitScheme.IDENTITY:
            beta_src = [np.zeros(d) for _ in range(L)]
            beta_dst = [np.zeros(d) for _ in range(L)]
        else:
            beta_src = [rng.normal(0.0, np.sqrt(2.0 / d), size=d) for _ in range(L)]
            beta_dst = [rng.normal(0.0, np.sqrt(2.0 / d), size=d) for _ in range(L)]
    return EncoderWeights(layers, beta_src, beta_dst)
