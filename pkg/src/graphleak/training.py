"""Full-batch node classification for the victim encoders.

Gradients are derived by hand for each architecture and checked against
central finite differences in the test suite. The loss is softmax cross
entropy of a linear head on the final representations. In NAG mode the
noise realization of one forward pass is treated as a constant.
"""

from __future__ import annotations

import enum
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .encoders import (
    Activation,
    Arch,
    EncoderWeights,
    InitScheme,
    Mode,
    NagConfig,
    SpectralNormState,
    encode,
    encode_layers,
    init_weights,
    propagation_matrix,
    spectral_normalize,
    _agg_matrix,
    _structure,
)
from .graph import DatasetBundle, NodeSubset
from .rng import SeedLike, as_generator

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


class Scheme(enum.Enum):
    UNCONSTRAINED = "UNCONSTRAINED"
    CONSTRAINED = "CONSTRAINED"


@dataclass
class ClassifierHead:
    weight: np.ndarray  # (d, C)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or not np.all(np.isfinite(self.weight)):
            raise TrainingError("head weight must be a finite 2-D matrix")

    @classmethod
    def init(cls, d: int, num_classes: int, seed: SeedLike) -> "ClassifierHead":
        rng = as_generator(seed, "head")
        return cls(rng.normal(0.0, math.sqrt(1.0 / d), size=(d, num_classes)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    scheme: Scheme = Scheme.UNCONSTRAINED
    sigma: float = 0.0
    seed: int = 0
    init: InitScheme = InitScheme.HE
    mode: Mode = Mode.NAG

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise TrainingError("learning_rate must be > 0")
        if self.sigma < 0:
            raise TrainingError("sigma must be >= 0")

    def nag_config(self, arch: Arch, sigma: float | None = None) -> NagConfig:
        if arch is Arch.LINEAR:
            return NagConfig()
        return NagConfig(sigma=self.sigma if sigma is None else sigma, mode=self.mode)


@dataclass
class Gradients:
    layers: list[np.ndarray]
    head: np.ndarray
    beta_src: list[np.ndarray] | None = None
    beta_dst: list[np.ndarray] | None = None


def _mask_ids(mask) -> np.ndarray:
    ids = mask.ids if isinstance(mask, NodeSubset) else np.asarray(mask, dtype=np.int64)
    if len(ids) == 0:
        raise TrainingError("mask must be nonempty")
    return ids


def forward_logits(bundle, weights, head, arch, cfg, epoch_seed: SeedLike = 0) -> np.ndarray:
    H = encode(bundle.graph, bundle.features, weights, Arch.parse(arch), cfg, epoch_seed)
    W = head.weight if isinstance(head, ClassifierHead) else np.asarray(head)
    if H.shape[1] != W.shape[0]:
        raise TrainingError(f"representation width {H.shape[1]} != head rows {W.shape[0]}")
    return H @ W


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels, mask) -> float:
    ids = _mask_ids(mask)
    lp = _log_softmax(np.asarray(logits, dtype=np.float64)[ids])
    y = np.asarray(labels)[ids]
    return float(-lp[np.arange(len(ids)), y].mean())


def accuracy(logits, labels, mask) -> float:
    ids = _mask_ids(mask)
    pred = np.argmax(np.asarray(logits)[ids], axis=1)  # first max wins ties
    return float(np.mean(pred == np.asarray(labels)[ids]))


def _loss_grad(logits, labels, ids):
    lp = _log_softmax(logits[ids])
    y = np.asarray(labels)[ids]
    loss = float(-lp[np.arange(len(ids)), y].mean())
    dl = np.zeros_like(logits)
    p = np.exp(lp)
    p[np.arange(len(ids)), y] -= 1.0
    dl[ids] = p / len(ids)
    return loss, dl


def _layer_backward(g, cache, W, arch, cfg, dout, beta_src=None, beta_dst=None):
    """Returns ``(dH_in, dW, dbeta_src, dbeta_dst)`` for one layer."""
    pre, Z, Hn = cache["pre"], cache["Z"], cache["Hn"]
    dM = dout * (pre > 0) if cache["act"] is Activation.RELU else dout
    s = _structure(g)
    dbs = dbd = None

    if arch in (Arch.MEAN_SAGE, Arch.GIN, Arch.GCN):
        dZ = _agg_matrix(s, arch).T @ dM
    elif arch is Arch.MAX_SAGE:
        dZ = np.zeros_like(Z)
        cols = np.broadcast_to(np.arange(Z.shape[1]), dM.shape)
        np.add.at(dZ, (cache["argmax"], cols), dM)
    else:
        alpha, x = cache["alpha"], cache["x"]
        dZ = s.matrix(alpha).T @ dM
        dalpha = np.einsum("ij,ij->i", dM[s.targets], Z[s.sources])
        seg = np.add.reduceat(alpha * dalpha, s.indptr[:-1])
        de = alpha * (dalpha - seg[s.targets])
        dx = np.where(x > 0, de, cfg.negative_slope * de)
        n = g.node_count
        d_src = np.bincount(s.sources, weights=dx, minlength=n)
        d_dst = np.bincount(s.targets, weights=dx, minlength=n)
        dZ += np.outer(d_src, beta_src) + np.outer(d_dst, beta_dst)
        dbs = Z.T @ d_src
        dbd = Z.T @ d_dst

    dW = Hn.T @ dZ
    dHn = dZ @ W.T
    if cfg.mode is Mode.NAG:
        ok, norms = cache["ok"], cache["norms"]
        dH = dHn.copy()
        y = Hn[ok]
        dy = dHn[ok]
        dH[ok] = (dy - y * np.einsum("ij,ij->i", y, dy)[:, None]) / norms[ok, None]
    else:
        dH = dHn
    return dH, dW, dbs, dbd


def backward(bundle, weights: EncoderWeights, head, arch, cfg: NagConfig, mask, epoch_seed: SeedLike = 0):
    """Loss on ``mask`` and its exact gradients, as ``(loss, Gradients)``."""
    arch = Arch.parse(arch)
    ids = _mask_ids(mask)
    Wh = head.weight if isinstance(head, ClassifierHead) else np.asarray(head, dtype=np.float64)
    g, X = bundle.graph, bundle.features

    if arch is Arch.LINEAR:
        if cfg.mode is Mode.NAG:
            raise TrainingError("LINEAR supports only STANDARD mode")
        P = propagation_matrix(g)
        PX = X
        for _ in range(weights.num_layers):
            PX = P @ PX
        H = PX @ weights.layers[0]
        loss, dlog = _loss_grad(H @ Wh, bundle.labels, ids)
        dH = dlog @ Wh.T
        return loss, Gradients([PX.T @ dH], H.T @ dlog)

    H, caches, _ = encode_layers(g, X, weights, arch, cfg, epoch_seed, keep_cache=True)
    loss, dlog = _loss_grad(H @ Wh, bundle.labels, ids)
    grads = Gradients([None] * len(weights.layers), H.T @ dlog)
    if arch is Arch.GAT:
        grads.beta_src = [None] * len(weights.layers)
        grads.beta_dst = [None] * len(weights.layers)
    dout = dlog @ Wh.T
    for l in reversed(range(len(weights.layers))):
        bs = weights.beta_src[l] if arch is Arch.GAT else None
        bd = weights.beta_dst[l] if arch is Arch.GAT else None
        dout, dW, dbs, dbd = _layer_backward(g, caches[l], weights.layers[l], arch, cfg, dout, bs, bd)
        grads.layers[l] = dW
        if arch is Arch.GAT:
            grads.beta_src[l] = dbs
            grads.beta_dst[l] = dbd
    return loss, grads


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, t: int, config: TrainConfig):
    """One bias-corrected Adam update at step ``t >= 1``; returns new params."""
    b1, b2 = config.betas
    out = []
    for i, (p, gr) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * gr
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * gr * gr
        mhat = state.m[i] / (1.0 - b1**t)
        vhat = state.v[i] / (1.0 - b2**t)
        out.append(p - config.learning_rate * mhat / (np.sqrt(vhat) + config.eps))
    state.t = t
    return out, state


def _pack(weights: EncoderWeights, head: np.ndarray) -> list[np.ndarray]:
    params = list(weights.layers)
    if weights.beta_src is not None:
        params += list(weights.beta_src) + list(weights.beta_dst)
    return params + [head]


def _pack_grads(gr: Gradients) -> list[np.ndarray]:
    params = list(gr.layers)
    if gr.beta_src is not None:
        params += list(gr.beta_src) + list(gr.beta_dst)
    return params + [gr.head]


def _unpack(params, template: EncoderWeights):
    L = len(template.layers)
    layers = params[:L]
    bs = bd = None
    if template.beta_src is not None:
        bs = params[L : 2 * L]
        bd = params[2 * L : 3 * L]
    return EncoderWeights(layers, bs, bd, template.depth), params[-1]


# ---------------------------------------------------------------- loop


@dataclass
class TrainResult:
    weights: EncoderWeights
    head: ClassifierHead
    losses: list[float] = field(default_factory=list)
    acc_noisy: float = math.nan
    acc_clean: float = math.nan
    acc_train: float = math.nan


def eval_seed(seed: int):
    return (seed, "eval")


def train(
    bundle: DatasetBundle,
    arch,
    d: int,
    L: int,
    config: TrainConfig = TrainConfig(),
    callback: Callable[[int, EncoderWeights, np.ndarray], None] | None = None,
) -> TrainResult:
    """Full-batch training on the train mask, accuracy on the test mask.

    CONSTRAINED spectrally normalizes every encoder matrix after each Adam
    step (the head is left alone). The power-iteration state of each layer
    is warm-started from a converged estimate, then advanced one iteration
    per step. ``callback(epoch, weights, head)`` runs after every epoch.
    """
    arch = Arch.parse(arch)
    if "train" not in bundle.masks or "test" not in bundle.masks:
        raise TrainingError("bundle needs train and test masks")
    train_ids = bundle.masks["train"]
    test_ids = bundle.masks["test"]
    seed = config.seed
    weights = init_weights(d, L, config.init, (seed, "init"), arch, d_in=bundle.d)
    head = ClassifierHead.init(d, bundle.num_classes, (seed, "head")).weight
    cfg = config.nag_config(arch)
    constrained = config.scheme is Scheme.CONSTRAINED
    if constrained and arch is Arch.LINEAR:
        raise TrainingError("CONSTRAINED scheme needs a message-passing encoder")

    sn_states = []
    if constrained:
        for i, W in enumerate(weights.layers):
            st = SpectralNormState.converged(W)
            weights.layers[i], st = spectral_normalize(W, st)
            sn_states.append(st)

    params = _pack(weights, head)
    state = AdamState.zeros_like(params)
    losses = []
    for epoch in range(config.epochs):
        loss, grads = backward(bundle, weights, head, arch, cfg, train_ids, (seed, "epoch", epoch))
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        losses.append(loss)
        params, state = adam_step(params, _pack_grads(grads), state, epoch + 1, config)
        weights, head = _unpack(params, weights)
        if constrained:
            for i, W in enumerate(weights.layers):
                weights.layers[i], _ = spectral_normalize(W, sn_states[i])
            params = _pack(weights, head)
        if callback is not None:
            callback(epoch, weights, head)
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.5f", epoch, loss)

    result = TrainResult(weights, ClassifierHead(head), losses)
    noisy = forward_logits(bundle, weights, head, arch, cfg, eval_seed(seed))
    result.acc_noisy = accuracy(noisy, bundle.labels, test_ids)
    result.acc_train = accuracy(noisy, bundle.labels, train_ids)
    clean = forward_logits(bundle, weights, head, arch, config.nag_config(arch, sigma=0.0), eval_seed(seed))
    result.acc_clean = accuracy(clean, bundle.labels, test_ids)
    return result
