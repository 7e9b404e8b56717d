"""Finite-difference gradient audits over every differentiable block.

Each fixture builds a miniature instance of one component with random
64-bit parameters and a deterministic scalar loss (dropout off), then
compares backprop against central differences. Used by the grad-check
command and the test suite.
"""

import numpy as np

from . import autodiff as ad
from .conllu import parse_conllu
from .errors import ConfigError
from .nn import Adapter, EncoderConfig, GateCombiner, adapter_forward, biaffine, \
    char_cnn, gate_combine, lstm_scan
from .parser import BiaffineParserModel, parser_loss
from .tagger import TaggerModel, tagger_logits
from .tagschemes import TagScheme, Vocab, build_tag_vocab, derive_tags

GRAD_TOL = 1e-4

_TOY_CONLLU = """\
# sent_id = toy-1
1\tkamas\tkama\tNOUN\t_\tCase=Nom|Number=Sg\t3\tnsubj\t_\t_
2\tdolun\tdolu\tNOUN\t_\tCase=Acc|Number=Sg\t3\tobj\t_\t_
3\tserti\tser\tVERB\t_\tNumber=Sg|Person=3\t0\troot\t_\t_
"""


def _toy_sentence():
    return parse_conllu(_TOY_CONLLU)[0]


def _tiny_config():
    return EncoderConfig(word_dim=5, char_dim=4, char_filters=6, char_kernel=3,
                         lstm_hidden=7, lstm_layers=2, dropout=0.0)


def _randomize(store, streams, names=None):
    # overwrite zero-initialized pieces so every path carries gradient
    for name in (names or store.names()):
        t = store.params[name]
        t.data = streams.generator(f"checks/{name}").normal(0.0, 0.5, t.data.shape)


def _fixture_char_cnn(streams):
    store = ad.ParameterStore()
    emb = store.add("emb", streams.generator("checks/emb").normal(0, 0.5, (7, 4)))
    w = store.add("w", streams.generator("checks/w").normal(0, 0.5, (12, 6)))
    b = store.add("b", streams.generator("checks/b").normal(0, 0.5, (6,)))
    ids = [1, 3, 0, 5, 2]

    def loss_fn():
        return ad.tsum(ad.tanh(char_cnn(ad.gather_rows(emb, ids), w, b)))

    return store, loss_fn


def _fixture_bilstm(streams):
    store = ad.ParameterStore()
    T, D, H = 4, 3, 5
    g = lambda tag, shape: streams.generator(f"checks/{tag}").normal(0, 0.5, shape)
    x = store.add("x", g("x", (T, D)))
    parts = {}
    for direction in ("fw", "bw"):
        parts[direction] = (store.add(f"{direction}/w_ih", g(f"{direction}i", (D, 4 * H))),
                            store.add(f"{direction}/w_hh", g(f"{direction}h", (H, 4 * H))),
                            store.add(f"{direction}/b", g(f"{direction}b", (4 * H,))))

    def loss_fn():
        fw = lstm_scan(x, *parts["fw"])
        bw = lstm_scan(x, *parts["bw"], reverse=True)
        return ad.tsum(ad.tanh(ad.concat([fw, bw], axis=1)))

    return store, loss_fn


def _fixture_biaffine(streams):
    store = ad.ParameterStore()
    n, d = 3, 4
    g = lambda tag, shape: streams.generator(f"checks/{tag}").normal(0, 0.5, shape)
    h_dep = store.add("h_dep", g("hd", (n, d)))
    h_head_t = store.add("h_head_t", g("hh", (d, n + 1)))
    u = store.add("u", g("u", (d, d)))
    u_head = store.add("u_head", g("uh", (d,)))
    bias = store.add("bias", np.array(0.3))

    def loss_fn():
        return ad.tsum(ad.tanh(biaffine(h_dep, h_head_t, u, u_head, bias)))

    return store, loss_fn


def _fixture_gate(streams, variant):
    store = ad.ParameterStore()
    k = 3 if variant == "softmax" else 2
    n, width = 4, 5
    g = lambda tag, shape: streams.generator(f"checks/{tag}").normal(0, 0.5, shape)
    reps = [store.add(f"rep{i}", g(f"rep{i}", (n, width))) for i in range(k)]
    combiner = GateCombiner(k, width, store, streams, name="gate", variant=variant)
    _randomize(store, streams, [p for p in store.names() if p.startswith("gate/")])

    def loss_fn():
        return ad.tsum(ad.tanh(gate_combine(reps, combiner)))

    return store, loss_fn


def _fixture_adapter(streams):
    store = ad.ParameterStore()
    n, width = 4, 5
    h = store.add("h", streams.generator("checks/h").normal(0, 0.5, (n, width)))
    adapter = Adapter(width, 3, store, streams, "adapter")
    _randomize(store, streams, [p for p in store.names() if p.startswith("adapter/")])

    def loss_fn():
        return ad.tsum(ad.tanh(adapter_forward(h, adapter)))

    return store, loss_fn


def _toy_vocabs(sent):
    word_vocab = Vocab.build(sent.forms)
    char_vocab = Vocab.build([c for f in sent.forms for c in f])
    return word_vocab, char_vocab


def _fixture_parser(streams):
    sent = _toy_sentence()
    word_vocab, char_vocab = _toy_vocabs(sent)
    store = ad.ParameterStore()
    model = BiaffineParserModel(store, streams, _tiny_config(), word_vocab, char_vocab,
                                sorted({t.deprel for t in sent.tokens}),
                                arc_mlp=5, label_mlp=4)

    def loss_fn():
        return parser_loss(sent, model, streams)

    return store, loss_fn


def _fixture_tagger(streams):
    sent = _toy_sentence()
    word_vocab, char_vocab = _toy_vocabs(sent)
    seq = derive_tags(sent, TagScheme.CT)
    tag_vocab = build_tag_vocab([seq])
    store = ad.ParameterStore()
    model = TaggerModel(store, streams, _tiny_config(), word_vocab, char_vocab,
                        tag_vocab, TagScheme.CT, fc1_dim=5, fc2_dim=4)
    ids = [tag_vocab.lookup(l) for l in seq.labels]

    def loss_fn():
        return ad.cross_entropy(tagger_logits(model, sent.forms, "train", streams), ids)

    return store, loss_fn


_FIXTURES = {
    "char_cnn": _fixture_char_cnn,
    "bilstm": _fixture_bilstm,
    "biaffine": _fixture_biaffine,
    "gate": lambda s: _fixture_gate(s, "softmax"),
    "gate_sigmoid": lambda s: _fixture_gate(s, "sigmoid"),
    "adapter": _fixture_adapter,
    "parser": _fixture_parser,
    "tagger": _fixture_tagger,
}

ALL_COMPONENTS = tuple(_FIXTURES)


def gradient_report(components=ALL_COMPONENTS, seed=0, samples=5):
    """Max relative gradient error per component, worst coordinate sampled."""
    report = {}
    for comp in components:
        if comp not in _FIXTURES:
            raise ConfigError(f"unknown component {comp!r}, pick from {ALL_COMPONENTS}")
        streams = ad.SeedStreams(seed)
        store, loss_fn = _FIXTURES[comp](streams)
        rng = streams.generator(f"checks/coords/{comp}")
        report[comp] = ad.grad_check(store, loss_fn, samples=samples, rng=rng)
    return report
