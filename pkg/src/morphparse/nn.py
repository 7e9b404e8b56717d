"""Neural building blocks: embeddings, char CNN, stacked BiLSTMs,
affine/biaffine forms, encoder gating, and adapters.

The LSTM scan and the char CNN are fused primitives: each forward records
a single tape node whose backward is written by hand, which keeps the
per-sentence graph small. Everything else composes the `autodiff` ops.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    word_dim: int = 300
    char_dim: int = 100
    char_filters: int = 100
    char_kernel: int = 3
    lstm_hidden: int = 1024
    lstm_layers: int = 2
    dropout: float = 0.33

    def __post_init__(self):
        for name in ("word_dim", "char_dim", "char_filters", "char_kernel",
                     "lstm_hidden", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"EncoderConfig.{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"EncoderConfig.dropout must be in [0,1), got {self.dropout}")

    @property
    def output_dim(self):
        return 2 * self.lstm_hidden

    @classmethod
    def desk(cls, **overrides):
        """Shrunken profile for laptop-scale experiments and tests."""
        cfg = cls(word_dim=32, char_dim=16, char_filters=16, char_kernel=3,
                  lstm_hidden=64, lstm_layers=2, dropout=0.33)
        return replace(cfg, **overrides) if overrides else cfg


def xavier_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def linear_params(store, streams, name, d_in, d_out):
    """Register an affine layer's weight (Xavier) and bias (zero)."""
    rng = streams.generator(f"init/{name}/w")
    w = store.add(f"{name}/w", xavier_uniform(rng, (d_in, d_out), d_in, d_out))
    b = store.add(f"{name}/b", np.zeros(d_out))
    return w, b


def _sig(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# fused primitives


def lstm_scan(inputs, w_ih, w_hh, b, reverse=False):
    """One LSTM direction over a [T, D] sequence; hidden states [T, H].

    Gate layout along the 4H axis is input|forget|cell|output. Initial
    hidden and cell states are zero. The whole scan is one tape node with
    hand-written backpropagation through time.
    """
    X, Wih, Whh, bias = inputs.data, w_ih.data, w_hh.data, b.data
    if X.ndim != 2:
        raise ShapeError(f"lstm_scan: inputs must be [T, D], got {X.shape}")
    T, D = X.shape
    if T < 1:
        raise ContractError("lstm_scan: empty sequence")
    H4 = Wih.shape[1]
    H = H4 // 4
    if Wih.shape != (D, H4) or Whh.shape != (H, H4) or bias.shape != (H4,) or H * 4 != H4:
        raise ShapeError(
            f"lstm_scan: w_ih {Wih.shape}, w_hh {Whh.shape}, b {bias.shape} for input {X.shape}")

    order = range(T - 1, -1, -1) if reverse else range(T)
    h = np.zeros(H)
    c = np.zeros(H)
    out = np.zeros((T, H))
    cache = []
    for t in order:
        z = X[t] @ Wih + h @ Whh + bias
        i = _sig(z[:H])
        f = _sig(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sig(z[3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache.append((t, h, c, i, f, g, o, tc))
        h = o * tc
        c = c_new
        out[t] = h

    def grad_fn(gout):
        dX = np.zeros_like(X)
        dWih = np.zeros_like(Wih)
        dWhh = np.zeros_like(Whh)
        db = np.zeros_like(bias)
        dh = np.zeros(H)
        dc = np.zeros(H)
        for t, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
            dh = dh + gout[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            dX[t] = dz @ Wih.T
            dWih += np.outer(X[t], dz)
            dWhh += np.outer(h_prev, dz)
            db += dz
            dh = dz @ Whh.T
            dc = dc * f
        if inputs.requires_grad:
            inputs.accumulate_grad(dX)
        if w_ih.requires_grad:
            w_ih.accumulate_grad(dWih)
        if w_hh.requires_grad:
            w_hh.accumulate_grad(dWhh)
        if b.requires_grad:
            b.accumulate_grad(db)

    return ad.apply_op(out, (inputs, w_ih, w_hh, b), grad_fn)


def char_cnn(char_embeds, conv_w, conv_b):
    """Slide a width-K window over [L, D] char embeddings, max-pool to [F].

    conv_w rows are window positions flattened k-major: [K*D, F]. Ties in
    the pooling go to the lowest position.
    """
    E, W, bvec = char_embeds.data, conv_w.data, conv_b.data
    if E.ndim != 2 or W.ndim != 2:
        raise ShapeError(f"char_cnn: embeds {E.shape}, weights {W.shape}")
    L, D = E.shape
    KD, F = W.shape
    if KD % D != 0:
        raise ShapeError(f"char_cnn: weight rows {KD} not a multiple of char dim {D}")
    K = KD // D
    if L < K:
        raise ContractError(f"char_cnn: sequence length {L} below kernel {K}; pad first")
    P = L - K + 1
    windows = np.lib.stride_tricks.sliding_window_view(E, K, axis=0)
    windows = windows.transpose(0, 2, 1).reshape(P, KD)
    scores = windows @ W + bvec
    arg = scores.argmax(axis=0)
    out = scores[arg, np.arange(F)]

    def grad_fn(g):
        d_scores = np.zeros_like(scores)
        d_scores[arg, np.arange(F)] = g
        if conv_b.requires_grad:
            conv_b.accumulate_grad(g.copy())
        if conv_w.requires_grad:
            conv_w.accumulate_grad(windows.T @ d_scores)
        if char_embeds.requires_grad:
            d_win = d_scores @ W.T
            dE = np.zeros_like(E)
            for p in range(P):
                dE[p:p + K] += d_win[p].reshape(K, D)
            char_embeds.accumulate_grad(dE)

    return ad.apply_op(out, (char_embeds, conv_w, conv_b), grad_fn)


# ---------------------------------------------------------------------------
# affine and biaffine forms


def affine(h, w, b):
    """W h + b, for a vector or a row-stacked matrix of vectors."""
    return ad.add(ad.matmul(h, w), b)


def biaffine(h_dep, h_head, u, u_head, bias):
    """h_dep' U h_head + u_head' h_head + bias; the linear term is the head prior."""
    term = ad.matmul(ad.matmul(h_dep, u), h_head)
    prior = ad.matmul(u_head, h_head)
    return ad.add(ad.add(term, prior), bias)


# ---------------------------------------------------------------------------
# word vectors


def load_word_vectors(path):
    """Read a whitespace-separated text vector file into {word: float64 array}.

    A first line of exactly two integer fields is treated as a count/dim
    header and skipped.
    """
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue
                except ValueError:
                    pass
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ConfigError(f"{path}: non-numeric vector entry, line {line_no}")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ConfigError(f"{path}: vector width {vec.size} != {dim}, line {line_no}")
            vectors[parts[0]] = vec
    return vectors


# ---------------------------------------------------------------------------
# token encoder


class EncoderStack:
    """Word+char token encoder: embeddings, char CNN, stacked BiLSTMs.

    Parameters are registered in an external ParameterStore under
    ``<name>/``; each is initialized from its own named random stream, so
    the draw for one parameter never depends on which other parameters
    exist. Row 0 of every encoding is a learned root representation.
    """

    def __init__(self, config, word_vocab, char_vocab, store, streams,
                 name="encoder", extra_input_dim=0, word_vectors=None):
        self.config = config
        self.name = name
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.extra_input_dim = int(extra_input_dim)
        self.input_dim = config.word_dim + config.char_filters + self.extra_input_dim
        self.store = store
        self.adapters = {}
        c = config

        def uniform(pname, shape):
            rng = streams.generator(f"init/{name}/{pname}")
            return store.add(f"{name}/{pname}", rng.uniform(-0.1, 0.1, size=shape))

        def xavier(pname, shape, fan_in, fan_out):
            rng = streams.generator(f"init/{name}/{pname}")
            return store.add(f"{name}/{pname}", xavier_uniform(rng, shape, fan_in, fan_out))

        self.word_emb = uniform("word_emb", (len(word_vocab), c.word_dim))
        if word_vectors:
            for word, vec in word_vectors.items():
                idx = word_vocab.index.get(word)
                if idx is None:
                    continue
                if vec.size != c.word_dim:
                    raise ConfigError(
                        f"pretrained vector for {word!r} has width {vec.size}, need {c.word_dim}")
                self.word_emb.data[idx] = vec
        self.char_emb = uniform("char_emb", (len(char_vocab), c.char_dim))
        kd = c.char_kernel * c.char_dim
        self.conv_w = xavier("char_conv_w", (kd, c.char_filters), kd, c.char_filters)
        self.conv_b = store.add(f"{name}/char_conv_b", np.zeros(c.char_filters))
        self.root = uniform("root", (self.input_dim,))

        self.layers = []
        d_in = self.input_dim
        for l in range(c.lstm_layers):
            per_dir = {}
            for direction in ("fw", "bw"):
                w_ih = xavier(f"lstm{l}/{direction}/w_ih", (d_in, 4 * c.lstm_hidden),
                              d_in, 4 * c.lstm_hidden)
                w_hh = xavier(f"lstm{l}/{direction}/w_hh", (c.lstm_hidden, 4 * c.lstm_hidden),
                              c.lstm_hidden, 4 * c.lstm_hidden)
                bias = np.zeros(4 * c.lstm_hidden)
                bias[c.lstm_hidden:2 * c.lstm_hidden] = 1.0  # forget gate starts open
                b = store.add(f"{name}/lstm{l}/{direction}/b", bias)
                per_dir[direction] = (w_ih, w_hh, b)
            self.layers.append(per_dir)
            d_in = 2 * c.lstm_hidden

    def attach_adapter(self, layer_index, streams, bottleneck=256):
        """Insert a residual adapter on the output of ``layer_index``."""
        if not 0 <= layer_index < self.config.lstm_layers:
            raise ConfigError(f"adapter layer {layer_index} out of range")
        name = f"{self.name}/adapter{layer_index}"
        self.adapters[layer_index] = Adapter(self.config.output_dim, bottleneck,
                                             self.store, streams, name)

    def lookup(self, forms):
        """(word ids, per-word char id lists) under this encoder's vocabs."""
        word_ids = [self.word_vocab.lookup(f) for f in forms]
        char_ids = [[self.char_vocab.lookup(ch) for ch in f] for f in forms]
        return word_ids, char_ids

    def encode(self, word_ids, char_ids, mode, streams, drop_key="",
               extra=None, return_all_layers=False):
        """Encode one sentence into [(n+1) x 2*lstm_hidden]; row 0 is ROOT."""
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be train or eval, got {mode!r}")
        n = len(word_ids)
        if n < 1:
            raise ContractError("encode: empty sentence")
        if len(char_ids) != n:
            raise ContractError(f"encode: {n} words but {len(char_ids)} char sequences")
        c = self.config
        train = mode == "train"

        wemb = ad.gather_rows(self.word_emb, word_ids)
        char_rows = []
        for cids in char_ids:
            if len(cids) < c.char_kernel:
                cids = list(cids) + [0] * (c.char_kernel - len(cids))
            cemb = ad.gather_rows(self.char_emb, cids)
            pooled = char_cnn(cemb, self.conv_w, self.conv_b)
            char_rows.append(ad.reshape(pooled, (1, c.char_filters)))
        char_mat = ad.concat(char_rows, axis=0)
        parts = [wemb, char_mat]
        if self.extra_input_dim:
            if extra is None or extra.shape != (n, self.extra_input_dim):
                raise ShapeError(
                    f"encode: extra input must be [{n}, {self.extra_input_dim}]")
            parts.append(extra)
        elif extra is not None:
            raise ContractError("encode: extra input supplied to a plain encoder")
        body = ad.concat(parts, axis=1)
        x = ad.concat([ad.reshape(self.root, (1, self.input_dim)), body], axis=0)

        def drop(t, tag):
            if not train or c.dropout == 0.0:
                return t
            rng = streams.generator(f"dropout/{drop_key}/{self.name}/{tag}")
            return ad.dropout(t, c.dropout, True, rng)

        x = drop(x, "input")
        outputs = []
        for l, per_dir in enumerate(self.layers):
            fw = lstm_scan(x, *per_dir["fw"])
            bw = lstm_scan(x, *per_dir["bw"], reverse=True)
            h = ad.concat([fw, bw], axis=1)
            if l in self.adapters:
                h = adapter_forward(h, self.adapters[l])
            outputs.append(h)
            x = drop(h, f"layer{l}")
        return outputs if return_all_layers else outputs[-1]

    def encode_forms(self, forms, mode, streams, drop_key="", extra=None,
                     return_all_layers=False):
        word_ids, char_ids = self.lookup(forms)
        return self.encode(word_ids, char_ids, mode, streams, drop_key=drop_key,
                           extra=extra, return_all_layers=return_all_layers)


# ---------------------------------------------------------------------------
# encoder gating


class GateCombiner:
    """Per-token fusion of K equal-width encoder outputs.

    softmax variant: alpha_k(t) = softmax_k(w_k . rep_k(t) + b_k), output
    is the alpha-weighted sum. sigmoid variant (K=2 only): an elementwise
    gate g = sigma(W [rep_1; rep_2] + b) mixes g*rep_1 + (1-g)*rep_2.
    """

    def __init__(self, k, width, store, streams, name="gate", variant="softmax"):
        if variant not in ("softmax", "sigmoid"):
            raise ConfigError(f"unknown gate variant {variant!r}")
        if k < 1:
            raise ConfigError("gate needs at least one encoder")
        if variant == "sigmoid" and k != 2:
            raise ConfigError("sigmoid gate variant is defined for exactly 2 encoders")
        self.k = k
        self.width = width
        self.variant = variant
        self.name = name
        rng = streams.generator(f"init/{name}/w")
        if variant == "softmax":
            self.w = store.add(f"{name}/w", xavier_uniform(rng, (width, k), width, k))
            self.b = store.add(f"{name}/b", np.zeros(k))
        else:
            self.w = store.add(f"{name}/w",
                               xavier_uniform(rng, (2 * width, width), 2 * width, width))
            self.b = store.add(f"{name}/b", np.zeros(width))


def _check_gate_shapes(reps, combiner):
    if len(reps) != combiner.k:
        raise ShapeError(f"gate expects {combiner.k} encoders, got {len(reps)}")
    shapes = [r.shape for r in reps]
    if any(len(s) != 2 or s != shapes[0] for s in shapes):
        raise ShapeError(f"gate inputs must share one 2-D shape, got {shapes}")
    if shapes[0][1] != combiner.width:
        raise ShapeError(f"gate width {combiner.width} vs inputs {shapes[0][1]}")


def gate_weights(reps, combiner):
    """The softmax gate's per-token alpha matrix [(n+1) x K] (diagnostics)."""
    if combiner.variant != "softmax":
        raise ContractError("gate_weights applies to the softmax variant")
    _check_gate_shapes(reps, combiner)
    cols = []
    for k, rep in enumerate(reps):
        w_k = combiner.w[:, k]
        s = ad.matmul(rep, w_k) + combiner.b[k]
        cols.append(ad.reshape(s, (rep.shape[0], 1)))
    return ad.softmax(ad.concat(cols, axis=1), axis=1)


def gate_combine(reps, combiner, force_primary=False):
    """Fuse encoder outputs per token; see GateCombiner for the two forms.

    ``force_primary`` pins the gate at the saturated limit where every
    non-primary score is -inf: the output is exactly reps[0] and no
    gradient reaches the gate parameters or the other encoders.
    """
    _check_gate_shapes(reps, combiner)
    if force_primary:
        return reps[0]
    if combiner.variant == "sigmoid":
        both = ad.concat(reps, axis=1)
        g = ad.sigmoid(ad.add(ad.matmul(both, combiner.w), combiner.b))
        return ad.add(ad.mul(g, reps[0]), ad.mul(ad.sub(1.0, g), reps[1]))
    alphas = gate_weights(reps, combiner)
    mixed = [ad.mul(alphas[:, k:k + 1], rep) for k, rep in enumerate(reps)]
    return ad.add_n(mixed)


# ---------------------------------------------------------------------------
# adapters


class Adapter:
    """Residual bottleneck: h + Up(relu(Down(h))).

    The up-projection starts at zero, so a fresh adapter is an exact
    identity map.
    """

    def __init__(self, width, bottleneck, store, streams, name):
        if bottleneck < 1:
            raise ConfigError("adapter bottleneck must be >= 1")
        self.width = width
        self.bottleneck = bottleneck
        rng = streams.generator(f"init/{name}/down_w")
        self.down_w = store.add(f"{name}/down_w",
                                xavier_uniform(rng, (width, bottleneck), width, bottleneck))
        self.down_b = store.add(f"{name}/down_b", np.zeros(bottleneck))
        self.up_w = store.add(f"{name}/up_w", np.zeros((bottleneck, width)))
        self.up_b = store.add(f"{name}/up_b", np.zeros(width))


def adapter_forward(h, adapter):
    inner = ad.relu(affine(h, adapter.down_w, adapter.down_b))
    return ad.add(h, affine(inner, adapter.up_w, adapter.up_b))
