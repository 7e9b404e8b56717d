"""Encoder layers: char CNN, BiLSTM stack, biaffine form, gating, adapters.

The LSTM and CNN fixtures are checked against definitional oracles
composed from basic autodiff ops, so fused forward/backward rules cannot
hide a shared bug.
"""

import numpy as np
import pytest

from morphparse import (
    Adapter,
    ConfigError,
    EncoderConfig,
    EncoderStack,
    GateCombiner,
    ParameterStore,
    SeedStreams,
    ShapeError,
    Tensor,
    Vocab,
    adapter_forward,
    backward,
    biaffine,
    char_cnn,
    gate_combine,
    gate_weights,
    grad_check,
    lstm_scan,
)
from morphparse import autodiff as ad
from morphparse.nn import affine, load_word_vectors


def small_encoder(store=None, streams=None, name="encoder", config=None, **kw):
    store = store or ParameterStore()
    streams = streams or SeedStreams(0)
    config = config or EncoderConfig(word_dim=6, char_dim=4, char_filters=5,
                                     char_kernel=3, lstm_hidden=7, lstm_layers=2,
                                     dropout=0.0)
    words = Vocab(["alpha", "beta", "gamma"])
    chars = Vocab(list("abgelmth"))
    enc = EncoderStack(config, words, chars, store, streams, name=name, **kw)
    return enc, store, streams


# --- definitional oracles -----------------------------------------------------


def lstm_reference(X, Wih, Whh, b, reverse=False):
    """Step-by-step LSTM from scratch using scalar-free numpy only."""
    T, _ = X.shape
    H = Whh.shape[0]
    h = np.zeros(H)
    c = np.zeros(H)
    out = np.zeros((T, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = X[t] @ Wih + h @ Whh + b
        i = 1 / (1 + np.exp(-z[:H]))
        f = 1 / (1 + np.exp(-z[H:2 * H]))
        g = np.tanh(z[2 * H:3 * H])
        o = 1 / (1 + np.exp(-z[3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def char_cnn_reference(E, W, b):
    K = W.shape[0] // E.shape[1]
    P = E.shape[0] - K + 1
    scores = np.stack([E[p:p + K].reshape(-1) @ W + b for p in range(P)])
    return scores.max(axis=0)


def test_lstm_scan_matches_reference():
    rng = np.random.default_rng(12)
    T, D, H = 5, 3, 4
    X = rng.normal(size=(T, D))
    Wih = rng.normal(scale=0.5, size=(D, 4 * H))
    Whh = rng.normal(scale=0.5, size=(H, 4 * H))
    b = rng.normal(scale=0.5, size=4 * H)
    for reverse in (False, True):
        got = lstm_scan(Tensor(X), Tensor(Wih), Tensor(Whh), Tensor(b),
                        reverse=reverse)
        want = lstm_reference(X, Wih, Whh, b, reverse=reverse)
        assert np.allclose(got.data, want, atol=1e-12)


def test_lstm_scan_gradient():
    rng = np.random.default_rng(4)
    store = ParameterStore()
    T, D, H = 4, 3, 3
    x = store.add("x", rng.normal(size=(T, D)))
    wih = store.add("wih", rng.normal(scale=0.4, size=(D, 4 * H)))
    whh = store.add("whh", rng.normal(scale=0.4, size=(H, 4 * H)))
    b = store.add("b", rng.normal(scale=0.4, size=4 * H))

    def loss_fn():
        out = lstm_scan(x, wih, whh, b)
        return ad.tsum(ad.tanh(out))

    assert grad_check(store, loss_fn, samples=8) < 1e-4


def test_lstm_scan_shape_errors():
    with pytest.raises(ShapeError):
        lstm_scan(Tensor(np.ones(3)), Tensor(np.ones((3, 8))),
                  Tensor(np.ones((2, 8))), Tensor(np.ones(8)))
    with pytest.raises(ShapeError):
        lstm_scan(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 7))),
                  Tensor(np.ones((2, 7))), Tensor(np.ones(7)))


def test_char_cnn_matches_reference():
    rng = np.random.default_rng(8)
    L, D, F, K = 6, 4, 5, 3
    E = rng.normal(size=(L, D))
    W = rng.normal(size=(K * D, F))
    b = rng.normal(size=F)
    got = char_cnn(Tensor(E), Tensor(W), Tensor(b))
    assert np.allclose(got.data, char_cnn_reference(E, W, b), atol=1e-12)


def test_char_cnn_zero_weights():
    E = np.random.default_rng(1).normal(size=(5, 3))
    out = char_cnn(Tensor(E), Tensor(np.zeros((9, 4))), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros(4))


def test_char_cnn_below_kernel_rejected():
    from morphparse import ContractError
    with pytest.raises(ContractError, match="pad"):
        char_cnn(Tensor(np.ones((2, 3))), Tensor(np.ones((9, 4))),
                 Tensor(np.zeros(4)))


def test_char_cnn_gradient():
    rng = np.random.default_rng(6)
    store = ParameterStore()
    e = store.add("e", rng.normal(size=(4, 3)))
    w = store.add("w", rng.normal(size=(9, 5)))
    b = store.add("b", rng.normal(size=5))

    def loss_fn():
        return ad.tsum(ad.tanh(char_cnn(e, w, b)))

    assert grad_check(store, loss_fn, samples=8) < 1e-4


# --- affine / biaffine -----------------------------------------------------------


def test_biaffine_zero_weights():
    h = Tensor(np.ones(3))
    z = biaffine(h, h, Tensor(np.zeros((3, 3))), Tensor(np.zeros(3)),
                 Tensor(np.array(0.0)))
    assert z.data == 0.0


def test_biaffine_identity_dot():
    h = Tensor(np.array([1.0, 1.0]))
    z = biaffine(h, h, Tensor(np.eye(2)), Tensor(np.zeros(2)),
                 Tensor(np.array(0.0)))
    assert z.data == pytest.approx(2.0)


def test_biaffine_asymmetric():
    rng = np.random.default_rng(3)
    u = Tensor(rng.normal(size=(4, 4)))
    prior = Tensor(rng.normal(size=4))
    bias = Tensor(np.array(0.1))
    a = Tensor(rng.normal(size=4))
    b = Tensor(rng.normal(size=4))
    ab = biaffine(a, b, u, prior, bias).data
    ba = biaffine(b, a, u, prior, bias).data
    assert abs(ab - ba) > 1e-6


def test_affine_rows():
    h = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    w = Tensor(np.array([[2.0], [3.0]]))
    b = Tensor(np.array([1.0]))
    out = affine(h, w, b)
    assert np.allclose(out.data, [[3.0], [4.0]])


# --- encoder stack ----------------------------------------------------------------


def test_encoder_output_shape():
    enc, _, streams = small_encoder()
    out = enc.encode_forms(["alpha", "beta", "gamma"], "eval", streams)
    assert out.shape == (4, 14)  # n+1 rows, 2*lstm_hidden wide


def test_encoder_eval_deterministic():
    enc, _, streams = small_encoder()
    a = enc.encode_forms(["alpha", "beta"], "eval", streams).data
    b = enc.encode_forms(["alpha", "beta"], "eval", streams).data
    assert np.array_equal(a, b)


def test_encoder_single_token():
    enc, _, streams = small_encoder()
    out = enc.encode_forms(["zzz"], "eval", streams)  # OOV: UNK fallback
    assert out.shape == (2, 14)
    assert np.all(np.isfinite(out.data))


def test_encoder_order_sensitive():
    enc, _, streams = small_encoder()
    ab = enc.encode_forms(["alpha", "beta"], "eval", streams).data
    ba = enc.encode_forms(["beta", "alpha"], "eval", streams).data
    assert not np.allclose(ab[1], ba[2])


def test_encoder_train_dropout_reproducible():
    cfg = EncoderConfig(word_dim=6, char_dim=4, char_filters=5, char_kernel=3,
                        lstm_hidden=7, lstm_layers=2, dropout=0.4)
    enc, _, streams = small_encoder(config=cfg)
    a = enc.encode_forms(["alpha", "beta"], "train", streams, drop_key="k1").data
    b = enc.encode_forms(["alpha", "beta"], "train", streams, drop_key="k1").data
    c = enc.encode_forms(["alpha", "beta"], "train", streams, drop_key="k2").data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_encoder_init_independent_of_registration_order():
    # an encoder's init draws depend only on its parameter names, not on
    # what else was registered first in the same store
    enc1, store1, _ = small_encoder(name="E")
    store2 = ParameterStore()
    streams2 = SeedStreams(0)
    small_encoder(store=store2, streams=streams2, name="other")
    small_encoder(store=store2, streams=streams2, name="E")
    for pname in ("E/word_emb", "E/lstm0/fw/w_ih"):
        assert np.array_equal(store1[pname].data, store2[pname].data)


def test_word_vectors_seed_embeddings(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("alpha " + " ".join(["0.5"] * 6) + "\n", encoding="utf-8")
    vectors = load_word_vectors(path)
    enc, store, _ = small_encoder(word_vectors=vectors)
    idx = enc.word_vocab.lookup("alpha")
    assert np.allclose(store["encoder/word_emb"].data[idx], 0.5)


def test_word_vectors_header_and_errors(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("2 3\nfoo 1 2 3\nbar 4 5 6\n", encoding="utf-8")
    vs = load_word_vectors(path)
    assert set(vs) == {"foo", "bar"}
    bad = tmp_path / "bad.txt"
    bad.write_text("foo 1 2\nbar 1 2 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="line 2"):
        load_word_vectors(bad)


# --- gating -----------------------------------------------------------------------


def gate_fixture(k, variant="softmax", width=6, n=4, seed=2):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    streams = SeedStreams(seed)
    combiner = GateCombiner(k, width, store, streams, variant=variant)
    reps = [Tensor(rng.normal(size=(n, width))) for _ in range(k)]
    return reps, combiner, store


def test_gate_k1_identity():
    reps, combiner, _ = gate_fixture(1)
    out = gate_combine(reps, combiner)
    assert np.allclose(out.data, reps[0].data, atol=1e-12)


def test_gate_identical_reps_fixed_point():
    reps, combiner, _ = gate_fixture(2)
    same = [reps[0], Tensor(reps[0].data.copy())]
    out = gate_combine(same, combiner)
    assert np.allclose(out.data, reps[0].data, atol=1e-12)


def test_gate_zero_weights_uniform_mean():
    reps, combiner, store = gate_fixture(3)
    store["gate/w"].data[:] = 0.0
    store["gate/b"].data[:] = 0.0
    out = gate_combine(reps, combiner)
    mean = np.mean([r.data for r in reps], axis=0)
    assert np.allclose(out.data, mean, atol=1e-12)
    alphas = gate_weights(reps, combiner).data
    assert np.allclose(alphas, 1.0 / 3.0, atol=1e-12)


def test_gate_weights_normalized():
    reps, combiner, _ = gate_fixture(3)
    alphas = gate_weights(reps, combiner).data
    assert np.allclose(alphas.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(alphas > 0) and np.all(alphas < 1)


def test_gate_force_primary_exact():
    reps, combiner, store = gate_fixture(3)
    for r in reps:
        r.requires_grad = True
    out = gate_combine(reps, combiner, force_primary=True)
    assert out is reps[0]
    backward(ad.tsum(ad.mul(out, out)))
    assert reps[1].grad is None
    assert store["gate/w"].grad is None


def test_gate_sigmoid_variant():
    reps, combiner, store = gate_fixture(2, variant="sigmoid")
    out = gate_combine(reps, combiner)
    assert out.shape == reps[0].shape
    # zero gate weights: sigma(0)=1/2 mixes the two reps equally
    store["gate/w"].data[:] = 0.0
    store["gate/b"].data[:] = 0.0
    out = gate_combine(reps, combiner)
    mean = (reps[0].data + reps[1].data) / 2.0
    assert np.allclose(out.data, mean, atol=1e-12)
    with pytest.raises(ConfigError):
        GateCombiner(3, 6, ParameterStore(), SeedStreams(0), variant="sigmoid")


def test_gate_shape_mismatch():
    reps, combiner, _ = gate_fixture(2)
    with pytest.raises(ShapeError):
        gate_combine([reps[0]], combiner)
    with pytest.raises(ShapeError):
        gate_combine([reps[0], Tensor(np.ones((4, 3)))], combiner)


# --- adapters ----------------------------------------------------------------------


def test_adapter_starts_as_identity():
    store = ParameterStore()
    adapter = Adapter(6, 3, store, SeedStreams(1), "ad")
    h = Tensor(np.random.default_rng(0).normal(size=(4, 6)))
    out = adapter_forward(h, adapter)
    assert np.allclose(out.data, h.data, atol=1e-15)


def test_adapter_shape_preserved_when_trained():
    store = ParameterStore()
    adapter = Adapter(6, 3, store, SeedStreams(1), "ad")
    store["ad/up_w"].data[:] = 0.1
    h = Tensor(np.random.default_rng(0).normal(size=(4, 6)))
    out = adapter_forward(h, adapter)
    assert out.shape == h.shape
    assert not np.allclose(out.data, h.data)


def test_encoder_adapter_attachment():
    enc, store, streams = small_encoder()
    enc.attach_adapter(1, streams, bottleneck=3)
    out = enc.encode_forms(["alpha", "beta"], "eval", streams)
    assert out.shape == (3, 14)
    assert "encoder/adapter1/up_w" in store
    with pytest.raises(ConfigError):
        enc.attach_adapter(5, streams)
