import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphleak.encoders import (
    Activation,
    Arch,
    ConvergenceError,
    Diagnostics,
    EncoderError,
    EncoderWeights,
    InitScheme,
    Mode,
    NagConfig,
    SpectralNormState,
    condition_number,
    encode,
    encode_layers,
    encode_linear,
    init_weights,
    jacobi_singular_values,
    mp_layer,
    operator_norm,
    propagation_matrix,
    spectral_normalize,
    _layer_forward,
    _power_iteration,
)
from graphleak.generators import ErSpec, gen_er
from graphleak.graph import Graph

from oracles import dense_linear_gnn, loop_layer

MP_ARCHS = ["GCN", "MEAN_SAGE", "MAX_SAGE", "GIN", "GAT"]
EDGE = Graph.from_edges(2, [(0, 1)])
I2 = np.eye(2)


def random_instance(seed, n=7, d=4, p=0.4):
    rng = np.random.default_rng(seed)
    g = gen_er(ErSpec(n, p), seed)
    return g, rng.standard_normal((n, d)), rng.standard_normal((d, d)), rng


def test_linear_examples():
    X = np.random.default_rng(0).standard_normal((4, 3))
    assert np.allclose(encode_linear(Graph.empty(4), X, np.eye(3), 5), X)
    assert np.allclose(encode_linear(EDGE, I2, I2, 1), [[0.5, 0.5], [0.5, 0.5]])
    g, X, W, _ = random_instance(1, d=4)
    assert np.allclose(encode_linear(g, 3.5 * X, W, 2), 3.5 * encode_linear(g, X, W, 2))


@pytest.mark.parametrize("L", [1, 2, 4])
def test_linear_matches_dense_oracle(L):
    g, X, W, _ = random_instance(L, n=12, d=5)
    assert np.allclose(encode_linear(g, X, W, L), dense_linear_gnn(g.to_dense().astype(float), X, W, L))


def test_propagation_is_row_stochastic():
    g = gen_er(ErSpec(50, 0.1), 3)
    assert np.allclose(propagation_matrix(g) @ np.ones(50), 1.0)


def test_linear_dimension_mismatch():
    with pytest.raises(EncoderError):
        encode_linear(EDGE, np.ones((2, 3)), I2, 1)


def test_isolated_node_examples():
    g = Graph.empty(1)
    cfg = NagConfig.nag(0.0, activation=Activation.IDENTITY)
    h = np.array([[3.0, 4.0]])
    mean = mp_layer(g, h, I2, Arch.MEAN_SAGE, cfg)
    assert np.allclose(mean, [[0.6, 0.8]])
    assert np.allclose(mp_layer(g, h, I2, Arch.GIN, cfg), mean)


def test_gcn_two_node_example():
    cfg = NagConfig(activation=Activation.IDENTITY)
    H = encode(EDGE, I2, EncoderWeights([I2]), Arch.GCN, cfg)
    assert np.allclose(H, 0.5)


def test_gat_zero_attention_is_mean():
    g, X, W, _ = random_instance(4)
    cfg = NagConfig(activation=Activation.IDENTITY)
    z = np.zeros(W.shape[1])
    gat = mp_layer(g, X, W, Arch.GAT, cfg, z, z)
    assert np.allclose(gat, mp_layer(g, X, W, Arch.MEAN_SAGE, cfg))


def test_gat_requires_attention_vectors():
    with pytest.raises(EncoderError):
        mp_layer(EDGE, I2, I2, Arch.GAT, NagConfig())


@pytest.mark.parametrize("arch", MP_ARCHS)
@pytest.mark.parametrize("nag", [False, True])
def test_layer_matches_loop_oracle(arch, nag):
    for seed in range(5):
        g, X, W, rng = random_instance(seed, n=9, d=4)
        bs, bd = rng.standard_normal(4), rng.standard_normal(4)
        noise = rng.standard_normal((9, 4)) if nag else None
        cfg = NagConfig.nag(1.0) if nag else NagConfig()
        out, _ = _layer_forward(g, X, W, Arch.parse(arch), cfg, Activation.RELU, bs, bd, noise)
        want = loop_layer(g.to_dense(), X, W, arch, nag=nag, noise=noise, relu=True, beta_src=bs, beta_dst=bd)
        assert np.allclose(out, want, atol=1e-12)


def test_encode_composes_layers():
    g, X, W, rng = random_instance(9)
    W2 = rng.standard_normal(W.shape)
    cfg = NagConfig.nag(0.5)
    H, caches, _ = encode_layers(g, X, EncoderWeights([W, W2]), Arch.GCN, cfg, 3, keep_cache=True)
    h1 = caches[1]["H_in"]
    one, _, _ = encode_layers(g, X, EncoderWeights([W]), Arch.GCN, NagConfig.nag(0.5, final_activation=Activation.RELU), 3)
    assert np.allclose(h1, one)
    assert H.shape == (g.node_count, W2.shape[1])


def test_encode_determinism_and_seed_sensitivity():
    g, X, W, _ = random_instance(2)
    w = EncoderWeights([W, W])
    cfg = NagConfig.nag(1.0)
    a = encode(g, X, w, Arch.MEAN_SAGE, cfg, seed=11)
    assert np.array_equal(a, encode(g, X, w, Arch.MEAN_SAGE, cfg, seed=11))
    assert not np.array_equal(a, encode(g, X, w, Arch.MEAN_SAGE, cfg, seed=12))


def test_standard_mode_ignores_sigma():
    g, X, W, _ = random_instance(5)
    w = EncoderWeights([W])
    a = encode(g, X, w, Arch.GIN, NagConfig(sigma=3.0), seed=1)
    b = encode(g, X, w, Arch.GIN, NagConfig(sigma=0.0), seed=2)
    assert np.array_equal(a, b)


def test_linear_has_no_nag_mode():
    with pytest.raises(EncoderError):
        encode(EDGE, I2, EncoderWeights([I2], depth=1), Arch.LINEAR, NagConfig.nag(1.0))


def test_zero_rows_bypass_normalization_and_are_counted():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    diag = Diagnostics()
    H = encode(EDGE, X, EncoderWeights([I2]), Arch.MEAN_SAGE, NagConfig.nag(0.0), diagnostics=diag)
    assert diag.unnormalized_rows == 1
    assert np.all(np.isfinite(H))


@pytest.mark.parametrize("arch", ["MEAN_SAGE", "GCN"])
def test_noiseless_nag_aggregate_bounded_by_operator_norm(arch):
    for seed in range(10):
        g, X, W, _ = random_instance(seed, n=15, d=6)
        cfg = NagConfig.nag(0.0, activation=Activation.IDENTITY)
        M = mp_layer(g, X, W, Arch.parse(arch), cfg)
        assert np.max(np.linalg.norm(M, axis=1)) <= operator_norm(W) * (1 + 1e-9)


def test_gat_attention_is_a_distribution():
    g, X, W, rng = random_instance(6, n=12)
    _, cache = _layer_forward(g, X, W, Arch.GAT, NagConfig(), Activation.RELU,
                              rng.standard_normal(4), rng.standard_normal(4), keep_cache=True)
    alpha = cache["alpha"]
    assert np.all(alpha >= 0)
    sums = np.add.reduceat(alpha, g.adjacency(self_loops=True).indptr[:-1])
    assert np.allclose(sums, 1.0)


def test_max_sage_permutation_invariant():
    g, X, W, _ = random_instance(8, n=10)
    perm = np.random.default_rng(0).permutation(10)
    inv = np.argsort(perm)
    e = g.edge_array()
    gp = Graph.from_edges(10, inv[e])
    cfg = NagConfig()
    a = mp_layer(g, X, W, Arch.MAX_SAGE, cfg)
    b = mp_layer(gp, X[perm], W, Arch.MAX_SAGE, cfg)
    assert np.allclose(a[perm], b)


# ---------------------------------------------------------------- spectra


def test_operator_norm_examples():
    assert operator_norm(np.eye(5)) == pytest.approx(1.0, rel=1e-12)
    assert operator_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-12)
    assert operator_norm(np.zeros((3, 3))) == 0.0


def test_operator_norm_vs_jacobi_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        W = rng.standard_normal((4, 4))
        s = jacobi_singular_values(W)[0]
        assert abs(operator_norm(W) - s) <= 1e-6 * s


@pytest.mark.parametrize("shape", [(128, 128), (300, 40), (40, 300)])
def test_operator_norm_large(shape):
    W = np.random.default_rng(1).standard_normal(shape)
    s = np.linalg.svd(W, compute_uv=False)[0]
    assert operator_norm(W) == pytest.approx(s, rel=1e-6)


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(2)
    for shape in [(3, 3), (5, 2), (2, 7), (16, 16)]:
        W = rng.standard_normal(shape)
        assert np.allclose(jacobi_singular_values(W), np.linalg.svd(W, compute_uv=False), rtol=1e-12)


def test_power_iteration_reports_last_iterate():
    G = np.diag(np.linspace(1.0, 0.999, 40))
    with pytest.raises(ConvergenceError) as exc:
        _power_iteration(G, max_iter=1, tol=1e-15)
    assert exc.value.last_estimate > 0 and exc.value.last_vector.shape == (40,)


def test_condition_number_examples():
    assert condition_number(np.eye(3)) == pytest.approx(1.0)
    assert condition_number(np.diag([4.0, 2.0])) == pytest.approx(2.0)
    assert condition_number(np.array([[1.0, 0.0], [0.0, 0.0]])) == float("inf")
    W = np.random.default_rng(0).standard_normal((40, 40))
    s = np.linalg.svd(W, compute_uv=False)
    assert condition_number(W) == pytest.approx(s[0] / s[-1])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10, allow_subnormal=False)))
def test_operator_norm_property(W):
    s = jacobi_singular_values(W)[0]
    assert operator_norm(W) == pytest.approx(s, rel=1e-6, abs=1e-12)


def test_spectral_normalize_identity_scale():
    W, state = spectral_normalize(5 * np.eye(4))
    for _ in range(4):
        W, state = spectral_normalize(5 * np.eye(4), state)
    assert np.allclose(W, np.eye(4), atol=1e-12)


def test_spectral_normalize_scale_invariant():
    W = np.random.default_rng(0).standard_normal((6, 6))
    sa, sb = SpectralNormState.random(6, 1), SpectralNormState.random(6, 1)
    for _ in range(30):
        a, sa = spectral_normalize(W, sa)
        b, sb = spectral_normalize(7.0 * W, sb)
    assert np.allclose(a, b)


def test_spectral_normalize_after_repeated_calls():
    W = np.random.default_rng(3).standard_normal((128, 128))
    state = None
    for _ in range(5):
        Wn, state = spectral_normalize(W, state)
    assert abs(operator_norm(Wn) - 1) <= 0.1


def test_spectral_normalize_tracks_slow_updates():
    # a 128x128 matrix drifting like ten small optimizer steps
    rng = np.random.default_rng(4)
    W = rng.standard_normal((128, 128))
    state = SpectralNormState.converged(W)
    W, state = spectral_normalize(W, state)
    for _ in range(10):
        W = W - 1e-3 * np.sign(rng.standard_normal(W.shape))
        W, state = spectral_normalize(W, state)
    assert 0.9 <= operator_norm(W) <= 1.1


def test_spectral_normalize_zero_matrix():
    with pytest.raises(EncoderError):
        spectral_normalize(np.zeros((2, 2)))


# ---------------------------------------------------------------- init


def test_identity_init():
    w = init_weights(4, 3, "IDENTITY", 0, "GCN")
    assert all(np.array_equal(W, np.eye(4)) for W in w.layers)
    g = init_weights(4, 2, "IDENTITY", 0, "GAT")
    assert all(not np.any(b) for b in g.beta_src + g.beta_dst)


def test_he_variance():
    vals = np.concatenate([init_weights(128, 1, "HE", s, "GCN").layers[0].ravel() for s in range(10)])
    assert abs(vals.var() - 2 / 128) <= 0.1 * 2 / 128


def test_product_single_factor_is_he():
    a = init_weights(64, 1, "PRODUCT", 5, "LINEAR").layers[0]
    b = init_weights(64, 1, "HE", 5, "LINEAR").layers[0]
    assert np.array_equal(a, b)
    w = init_weights(8, 3, "PRODUCT", 0, "LINEAR")
    assert len(w.layers) == 1 and w.num_layers == 3


def test_product_only_for_linear():
    with pytest.raises(EncoderError):
        init_weights(4, 2, InitScheme.PRODUCT, 0, "GCN")


def test_first_layer_takes_feature_width():
    w = init_weights(16, 2, "HE", 0, "GAT", d_in=30)
    assert [W.shape for W in w.layers] == [(30, 16), (16, 16)]
    assert w.beta_src[0].shape == (16,)


def test_arch_aliases():
    assert Arch.parse("lin") is Arch.LINEAR
    assert Arch.parse("max-sage") is Arch.MAX_SAGE
    assert Mode("NAG") is Mode.NAG
