"""Dense float64 tensors with reverse-mode automatic differentiation.

A small numpy-backed tape: every traced operation links its output tensor
to its inputs and a closure that routes gradients backward. One forward
pass builds one implicit graph; ``backward`` walks it in reverse
topological order and then consumes it. Includes the Adam optimizer, a
finite-difference gradient checker, named counter-based random streams,
and a binary parameter checkpoint format.
"""

import hashlib
import struct
import zlib
from contextlib import contextmanager

import numpy as np

from .errors import CheckpointError, ContractError, NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable taping inside the block (evaluation-mode forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(value, parents, grad_fn):
    """Build the tensor for a primitive: track it when taping is on.

    ``grad_fn(g)`` must accumulate gradients into each tracked parent.
    Exposed so higher layers can register fused primitives with
    hand-written backward rules.
    """
    out = Tensor(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return apply_op(value, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return apply_op(value, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return apply_op(value, (a, b), grad_fn)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    value = a.data @ b.data

    def grad_fn(g):
        ad, bd = a.data, b.data
        g2 = np.atleast_2d(g)
        a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
        b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
        if ad.ndim == 1 and bd.ndim == 1:
            g2 = g.reshape(1, 1)
        elif ad.ndim == 1:
            g2 = g.reshape(1, -1)
        elif bd.ndim == 1:
            g2 = g.reshape(-1, 1)
        if a.requires_grad:
            a.accumulate_grad((g2 @ b2.T).reshape(ad.shape))
        if b.requires_grad:
            b.accumulate_grad((a2.T @ g2).reshape(bd.shape))

    return apply_op(value, (a, b), grad_fn)


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g.T)

    return apply_op(a.data.T, (a,), grad_fn)


def reshape(a, shape):
    a = _as_tensor(a)

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return apply_op(a.data.reshape(shape), (a,), grad_fn)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    value = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return apply_op(value, tensors, grad_fn)


def narrow(a, key):
    """Basic-indexing slice; gradients scatter back into the source."""
    a = _as_tensor(a)
    value = a.data[key]

    def grad_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            a.accumulate_grad(full)

    return apply_op(value, (a,), grad_fn)


def gather_rows(a, indices):
    """Row lookup with integer indices (also serves as embedding lookup)."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    value = a.data[idx]

    def grad_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate_grad(full)

    return apply_op(value, (a,), grad_fn)


embedding_lookup = gather_rows


def tanh(a):
    a = _as_tensor(a)
    value = np.tanh(a.data)

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - value * value))

    return apply_op(value, (a,), grad_fn)


def sigmoid(a):
    a = _as_tensor(a)
    value = 1.0 / (1.0 + np.exp(-a.data))

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * value * (1.0 - value))

    return apply_op(value, (a,), grad_fn)


def relu(a):
    a = _as_tensor(a)
    value = np.maximum(a.data, 0.0)

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return apply_op(value, (a,), grad_fn)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        if a.requires_grad:
            dot = (g * value).sum(axis=axis, keepdims=True)
            a.accumulate_grad(value * (g - dot))

    return apply_op(value, (a,), grad_fn)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    value = shifted - lse

    def grad_fn(g):
        if a.requires_grad:
            p = np.exp(value)
            a.accumulate_grad(g - p * g.sum(axis=axis, keepdims=True))

    return apply_op(value, (a,), grad_fn)


def dropout(a, p, training, rng):
    """Inverted dropout: scales kept units by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    a = _as_tensor(a)
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    value = a.data * mask

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return apply_op(value, (a,), grad_fn)


def max_over_axis(a, axis):
    """Max reduction; ties route the gradient to the lowest index."""
    a = _as_tensor(a)
    value = a.data.max(axis=axis)
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)

    def grad_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.put_along_axis(full, arg, np.expand_dims(g, axis), axis)
            a.accumulate_grad(full)

    return apply_op(value, (a,), grad_fn)


def tsum(a, axis=None):
    a = _as_tensor(a)
    value = a.data.sum(axis=axis)

    def grad_fn(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate_grad(np.full_like(a.data, g))
            else:
                a.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return apply_op(value, (a,), grad_fn)


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def add_n(tensors):
    """Sum a list of same-shape tensors in one node."""
    tensors = [_as_tensor(t) for t in tensors]
    value = tensors[0].data.copy()
    for t in tensors[1:]:
        value = value + t.data

    def grad_fn(g):
        for t in tensors:
            if t.requires_grad:
                t.accumulate_grad(g)

    return apply_op(value, tensors, grad_fn)


def cross_entropy(logits, target):
    """Mean negative log-likelihood under a softmax over the last axis.

    ``logits`` is a vector with an integer target, or a matrix with one
    target per row. Cells holding -inf are treated as masked out.
    """
    logits = _as_tensor(logits)
    ld = logits.data
    if ld.ndim == 1:
        ld = ld.reshape(1, -1)
        targets = np.array([int(target)], dtype=np.intp)
    elif ld.ndim == 2:
        targets = np.asarray(target, dtype=np.intp)
        if targets.shape != (ld.shape[0],):
            raise ContractError(
                f"cross_entropy: {ld.shape[0]} rows need {ld.shape[0]} targets, got {targets.shape}")
    else:
        raise ShapeError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    n = ld.shape[0]
    m = ld.max(axis=1, keepdims=True)
    e = np.exp(ld - m)
    z = e.sum(axis=1, keepdims=True)
    log_probs = ld - m - np.log(z)
    value = -log_probs[np.arange(n), targets].mean()

    def grad_fn(g):
        if logits.requires_grad:
            p = e / z
            p[np.arange(n), targets] -= 1.0
            p *= g / n
            logits.accumulate_grad(p.reshape(logits.data.shape))

    return apply_op(value, (logits,), grad_fn)


def backward(loss):
    """Accumulate d(loss)/d(tensor) into every tracked tensor's grad.

    The recorded graph is consumed: a second backward through the same
    nodes is not possible.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not tracked")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.accumulate_grad(np.array(1.0))
    for node in reversed(topo):
        if node._grad_fn is not None and node.grad is not None:
            node._grad_fn(node.grad)
        if node._parents:
            node.grad = None  # interior nodes: free memory, keep leaves
        node._parents = ()
        node._grad_fn = None


# ---------------------------------------------------------------------------
# named random streams


class SeedStreams:
    """Order-independent random streams keyed by (seed, purpose string).

    Built on the counter-based Philox generator, so a stream's draws do
    not depend on how many other streams were consumed before it.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def generator(self, purpose):
        digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=16).digest()
        words = [int.from_bytes(digest[i:i + 8], "little") for i in (0, 8)]
        ss = np.random.SeedSequence([self.seed] + words)
        return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# parameters and Adam


class ParameterStore:
    """Named trainable tensors plus per-parameter Adam state.

    Supports freezing (no update, gradient discarded) and per-parameter
    learning-rate scales for discriminative fine-tuning schedules.
    """

    def __init__(self):
        self.params = {}
        self._m = {}
        self._v = {}
        self._step = {}
        self.frozen = set()
        self.lr_scale = {}

    def add(self, name, data):
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return sorted(self.params)

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def freeze(self, prefix):
        self.frozen.update(n for n in self.params if n.startswith(prefix))

    def unfreeze(self, prefix):
        self.frozen.difference_update(n for n in self.params if n.startswith(prefix))

    def set_lr_scale(self, prefix, scale):
        for n in self.params:
            if n.startswith(prefix):
                self.lr_scale[n] = float(scale)

    def n_parameters(self, trainable_only=False):
        return sum(t.data.size for n, t in self.params.items()
                   if not (trainable_only and n in self.frozen))

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state):
        for n, arr in state.items():
            if n not in self.params:
                raise ContractError(f"unknown parameter {n!r}")
            if self.params[n].data.shape != arr.shape:
                raise ShapeError(f"parameter {n!r}: stored {arr.shape} vs model {self.params[n].data.shape}")
            self.params[n].data = np.array(arr, dtype=np.float64)


def adam_step(store, lr=0.002, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; all gradients are zeroed afterward."""
    b1, b2 = betas
    for name in store.names():
        p = store.params[name]
        if name in store.frozen or p.grad is None:
            p.grad = None
            continue
        g = p.grad
        m = store._m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
            store._step[name] = 0
        v = store._v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store._m[name], store._v[name] = m, v
        store._step[name] += 1
        t = store._step[name]
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p.data -= lr * store.lr_scale.get(name, 1.0) * mhat / (np.sqrt(vhat) + eps)
        p.grad = None


def grad_check(store, loss_fn, eps=1e-5, samples=5, rng=None):
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must be deterministic for fixed parameters (disable
    dropout). Returns the max over sampled coordinates of
    |analytic - numeric| / max(1e-6, |analytic| + |numeric|). The 1e-6
    floor keeps cancellation noise on near-zero gradients (the central
    difference resolves at best ~ulp(loss)/eps) from masquerading as
    relative error; a real formula bug still shows up through any
    coordinate whose gradient has workable magnitude.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    store.zero_grads()
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericError("grad_check: non-finite loss")
    backward(loss)
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for n, t in store.params.items()}
    store.zero_grads()

    worst = 0.0
    for name in store.names():
        if name in store.frozen:
            continue
        p = store.params[name]
        flat = p.data.reshape(-1)
        k = min(samples, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = loss_fn().item()
            flat[c] = orig - eps
            down = loss_fn().item()
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"grad_check: non-finite loss perturbing {name}[{c}]")
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[c]
            err = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format: length-prefixed name/shape/data records + CRC32

_MAGIC = b"MPCKPT\x00\x01"
_VERSION = 1


def save_checkpoint(params, path):
    """Write named float64 arrays bit-exactly. Accepts a ParameterStore or dict."""
    if isinstance(params, ParameterStore):
        items = [(n, params.params[n].data) for n in params.names()]
    else:
        items = [(n, np.asarray(params[n], dtype=np.float64)) for n in sorted(params)]
    body = bytearray()
    body += struct.pack("<II", _VERSION, len(items))
    for name, arr in items:
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        body += arr.astype("<f8").tobytes(order="C")
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(body)
        f.write(struct.pack("<I", crc))


def load_checkpoint(path):
    """Read a checkpoint back into a dict name -> float64 array."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(_MAGIC) + 12 or blob[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    body, (crc,) = blob[len(_MAGIC):-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupted")
    version, count = struct.unpack_from("<II", body, 0)
    if version != _VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {_VERSION}")
    off = 8
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, off) if ndim else ()
        off += 8 * ndim
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
        arr = np.frombuffer(body[off:off + n_bytes], dtype="<f8").reshape(shape)
        off += n_bytes
        out[name] = arr.astype(np.float64)
    return out
