"""Substrate tour: reverse-mode autodiff, seeded streams, one training step.

Run me:  python3 demos/02_training_basics.py
"""

import numpy as np

import morphparse.autodiff as ad
from morphparse import EncoderConfig, EncoderStack, Vocab, grad_check

# 1. Tensors tape their history; backward() fills .grad.
w = ad.Tensor(np.array([2.0, -1.0]), requires_grad=True)
loss = ad.tsum(ad.mul(w, w))
ad.backward(loss)
print(f"d/dw sum(w*w) at {w.data} -> {w.grad}")   # analytic: 2w = [4, -2]

# 2. Parameters live in a store; adam_step updates everything with a grad.
store = ad.ParameterStore()
p = store.add("demo/w", np.zeros(1))
p.grad = np.ones(1)
ad.adam_step(store, lr=0.002)
print(f"adam first step from 0 with grad 1: {p.data[0]:+.6f}")  # -0.002 exactly

# 3. grad_check compares every parameter against central finite differences.
store = ad.ParameterStore()
a = store.add("demo/a", np.array([[0.3, -0.2], [0.1, 0.4]]))
b = store.add("demo/b", np.array([0.05, -0.15]))

def tiny_loss():
    h = ad.tanh(ad.add(ad.matmul(ad.Tensor(np.eye(2)), a), b))
    return ad.tsum(ad.mul(h, h))

worst = grad_check(store, tiny_loss)
print(f"finite-difference audit, max relative error: {worst:.2e}")

# 4. The encoder stack: word + char-CNN features through a BiLSTM.
#    Same seed, same purpose strings -> bit-identical parameters, no matter
#    the order modules get built in.
streams = ad.SeedStreams(seed=1)
words = Vocab(["the", "cat", "sat"])
chars = Vocab(list("thecas"))
cfg = EncoderConfig(word_dim=8, char_dim=6, char_filters=8, char_kernel=3,
                    lstm_hidden=10, lstm_layers=2, dropout=0.0)
store = ad.ParameterStore()
enc = EncoderStack(cfg, words, chars, store, streams, name="encoder")
out = enc.encode_forms(["the", "cat", "sat"], "eval", streams)
print(f"encoder output: {out.shape} (root slot + one row per token, "
      f"width 2*hidden = {cfg.output_dim})")
print(f"parameters registered: {store.n_parameters()}")
