"""BiLSTM sequence taggers for the auxiliary schemes, plus the 3-layer
hierarchical morphological tagger whose lower layers seed transfer runs.

A tagger is an EncoderStack followed by two fully connected relu layers
and a softmax over the scheme's label vocabulary. Training minimizes mean
token cross-entropy with Adam and keeps the checkpoint with the best dev
accuracy. ``config`` here is duck-typed: anything carrying the training
constants (epochs, batch_size, lr, betas, adam_eps, seed, encoder, fc1,
fc2) works, in particular pipelines.TrainConfig.
"""

import json
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, ContractError
from .nn import EncoderConfig, EncoderStack, affine, linear_params
from .tagschemes import TagScheme, TagSequence, Vocab, build_tag_vocab, derive_tags


class TaggerModel:
    """Encoder + fc1 + fc2 + output layer over one tag vocabulary."""

    def __init__(self, store, streams, config, word_vocab, char_vocab, tag_vocab,
                 scheme, name="tagger", encoder_name=None, fc1_dim=128, fc2_dim=64):
        self.store = store
        self.config = config
        self.scheme = TagScheme(scheme)
        self.name = name
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.tag_vocab = tag_vocab
        self.fc1_dim = fc1_dim
        self.fc2_dim = fc2_dim
        self.encoder = EncoderStack(config, word_vocab, char_vocab, store, streams,
                                    name=encoder_name or f"{name}/encoder")
        width = config.output_dim
        self.fc1_w, self.fc1_b = linear_params(store, streams, f"{name}/fc1", width, fc1_dim)
        self.fc2_w, self.fc2_b = linear_params(store, streams, f"{name}/fc2", fc1_dim, fc2_dim)
        self.out_w, self.out_b = linear_params(store, streams, f"{name}/out",
                                               fc2_dim, len(tag_vocab))
        self.history = None

    @property
    def dropout(self):
        return self.config.dropout


def _head(h, model, mode, streams, drop_key):
    def drop(t, tag):
        if mode != "train" or model.dropout == 0.0:
            return t
        rng = streams.generator(f"dropout/{drop_key}/{model.name}/{tag}")
        return ad.dropout(t, model.dropout, True, rng)

    h1 = drop(ad.relu(affine(h, model.fc1_w, model.fc1_b)), "fc1")
    h2 = drop(ad.relu(affine(h1, model.fc2_w, model.fc2_b)), "fc2")
    return affine(h2, model.out_w, model.out_b)


def tagger_logits(model, forms, mode, streams, drop_key=""):
    encoded = model.encoder.encode_forms(forms, mode, streams, drop_key=drop_key)
    return _head(encoded[1:, :], model, mode, streams, drop_key)


def tagger_forward(model, forms, mode="eval", streams=None, drop_key=""):
    """Per-token label distributions [n x |tags|]; rows sum to 1."""
    return ad.softmax(tagger_logits(model, forms, mode, streams, drop_key), axis=1)


def predict_tags(model, forms_list, streams=None):
    """Argmax labels per sentence (lowest index on ties)."""
    out = []
    with ad.no_grad():
        for forms in forms_list:
            logits = tagger_logits(model, forms, "eval", streams)
            ids = np.argmax(logits.data, axis=1)
            out.append(TagSequence(model.scheme,
                                   tuple(model.tag_vocab.symbol(int(i)) for i in ids)))
    return out


def _dev_accuracy(model, data, streams):
    correct = total = 0
    with ad.no_grad():
        for forms, seq in data:
            logits = tagger_logits(model, forms, "eval", streams)
            ids = np.argmax(logits.data, axis=1)
            for i, lab in zip(ids, seq.labels):
                total += 1
                correct += model.tag_vocab.symbol(int(i)) == lab
    return correct / total if total else 0.0


def train_tagger(train_data, dev_data, scheme, config, streams=None, name="tagger",
                 encoder_name=None, min_freq=None):
    """Fit one scheme tagger; returns the best-dev-accuracy checkpoint.

    ``train_data``/``dev_data`` are lists of (forms, TagSequence) pairs;
    dev may be None, in which case the final epoch's weights are kept.
    """
    if not train_data:
        raise ConfigError("train_tagger: empty training data")
    scheme = TagScheme(scheme)
    if streams is None:
        streams = ad.SeedStreams(config.seed)
    forms_train = [f for f, _ in train_data]
    word_vocab = Vocab.build([w for fs in forms_train for w in fs])
    char_vocab = Vocab.build([ch for fs in forms_train for w in fs for ch in w])
    tag_vocab = build_tag_vocab([s for _, s in train_data], min_freq=min_freq)
    if len(tag_vocab) <= 2:
        raise ConfigError(f"{scheme.value}: tag vocabulary is empty")
    store = ad.ParameterStore()
    model = TaggerModel(store, streams, config.encoder, word_vocab, char_vocab,
                        tag_vocab, scheme, name=name, encoder_name=encoder_name,
                        fc1_dim=config.fc1, fc2_dim=config.fc2)

    n = len(train_data)
    best_acc, best_state = -1.0, None
    trajectory = []
    for epoch in range(config.epochs):
        order = streams.generator(f"order/{name}/{epoch}").permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            scale = 1.0 / len(batch)
            for si in batch:
                forms, seq = train_data[int(si)]
                ids = [tag_vocab.lookup(lab) for lab in seq.labels]
                logits = tagger_logits(model, forms, "train", streams,
                                       drop_key=f"{name}/{epoch}/{int(si)}")
                ad.backward(ad.mul(ad.cross_entropy(logits, ids), scale))
            ad.adam_step(store, lr=config.lr, betas=config.betas, eps=config.adam_eps)
        if dev_data:
            acc = _dev_accuracy(model, dev_data, streams)
            trajectory.append(acc)
            if acc > best_acc:
                best_acc, best_state = acc, store.state_dict()
    if best_state is not None:
        store.load_state_dict(best_state)
    model.history = {"dev_accuracy": trajectory,
                     "best_dev_accuracy": best_acc if best_acc >= 0 else None}
    return model


def tag_metrics(pred, gold):
    """Token accuracy and macro-F1 over the labels present in gold."""
    if len(pred) != len(gold):
        raise ContractError(f"tag_metrics: {len(pred)} predicted vs {len(gold)} gold sentences")
    correct = total = 0
    tp, fp, fn = {}, {}, {}
    gold_labels = set()
    for k, (ps, gs) in enumerate(zip(pred, gold)):
        if len(ps.labels) != len(gs.labels):
            raise ContractError(f"tag_metrics: length mismatch in sentence {k}")
        for p, g in zip(ps.labels, gs.labels):
            total += 1
            gold_labels.add(g)
            if p == g:
                correct += 1
                tp[g] = tp.get(g, 0) + 1
            else:
                fn[g] = fn.get(g, 0) + 1
                fp[p] = fp.get(p, 0) + 1
    if not gold_labels:
        raise ContractError("tag_metrics: no gold labels")
    f1s = []
    for lab in sorted(gold_labels):
        denom = 2 * tp.get(lab, 0) + fp.get(lab, 0) + fn.get(lab, 0)
        f1s.append(2 * tp.get(lab, 0) / denom if denom else 0.0)
    return {"accuracy": correct / total, "macro_f1": float(np.mean(f1s))}


# ---------------------------------------------------------------------------
# hierarchical morphological tagger (transfer source)

HIER_SCHEMES = (TagScheme.NT, TagScheme.GT, TagScheme.CT)  # number, gender, case


class HierMorphTagger:
    """Three stacked BiLSTM layers with one tagging head per layer.

    The number head reads layer 1, the gender head layer 2, the case head
    layer 3; each head is fc1/fc2/softmax as in TaggerModel.
    """

    def __init__(self, store, streams, config, word_vocab, char_vocab, tag_vocabs,
                 name="hiermorph", fc1_dim=128, fc2_dim=64):
        if config.lstm_layers != 3:
            config = replace(config, lstm_layers=3)
        self.store = store
        self.config = config
        self.name = name
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.tag_vocabs = dict(tag_vocabs)
        self.fc1_dim = fc1_dim
        self.fc2_dim = fc2_dim
        for scheme in HIER_SCHEMES:
            if scheme not in self.tag_vocabs:
                raise ConfigError(f"missing tag vocabulary for {scheme.value}")
        self.encoder = EncoderStack(config, word_vocab, char_vocab, store, streams,
                                    name=f"{name}/encoder")
        width = config.output_dim
        self.heads = {}
        for scheme in HIER_SCHEMES:
            prefix = f"{name}/head_{scheme.value}"
            self.heads[scheme] = (
                linear_params(store, streams, f"{prefix}/fc1", width, fc1_dim),
                linear_params(store, streams, f"{prefix}/fc2", fc1_dim, fc2_dim),
                linear_params(store, streams, f"{prefix}/out", fc2_dim,
                              len(self.tag_vocabs[scheme])),
            )

    @property
    def dropout(self):
        return self.config.dropout


def hier_forward(model, forms, mode="eval", streams=None, drop_key=""):
    """Logits per task: {NT: [n x |NT|], GT: ..., CT: ...}."""
    layers = model.encoder.encode_forms(forms, mode, streams, drop_key=drop_key,
                                        return_all_layers=True)
    out = {}
    for k, scheme in enumerate(HIER_SCHEMES):
        (f1w, f1b), (f2w, f2b), (ow, ob) = model.heads[scheme]
        h = layers[k][1:, :]

        def drop(t, tag):
            if mode != "train" or model.dropout == 0.0:
                return t
            rng = streams.generator(
                f"dropout/{drop_key}/{model.name}/{scheme.value}/{tag}")
            return ad.dropout(t, model.dropout, True, rng)

        h1 = drop(ad.relu(affine(h, f1w, f1b)), "fc1")
        h2 = drop(ad.relu(affine(h1, f2w, f2b)), "fc2")
        out[scheme] = affine(h2, ow, ob)
    return out


def extract_layers(model):
    """The three BiLSTM layer weight sets, bottom-up (number, gender, case)."""
    out = []
    for l in range(3):
        per_dir = {}
        for direction in ("fw", "bw"):
            w_ih, w_hh, b = model.encoder.layers[l][direction]
            per_dir[direction] = {"w_ih": w_ih.data.copy(),
                                  "w_hh": w_hh.data.copy(),
                                  "b": b.data.copy()}
        out.append(per_dir)
    return out


def train_hier_morph_tagger(train, config, dev=None, streams=None, name="hiermorph"):
    """Fit the 3-task tagger on a treebank with morphology.

    Joint loss is the sum of the three heads' mean cross-entropies; model
    selection uses mean dev accuracy over the tasks when dev is given.
    """
    if not len(train):
        raise ConfigError("train_hier_morph_tagger: empty treebank")
    if streams is None:
        streams = ad.SeedStreams(config.seed)

    def tag_table(treebank):
        return {s: [derive_tags(sent, s) for sent in treebank] for s in HIER_SCHEMES}

    train_tags = tag_table(train)
    dev_tags = tag_table(dev) if dev is not None else None
    word_vocab = Vocab.build([t.form for sent in train for t in sent.tokens])
    char_vocab = Vocab.build([ch for sent in train for t in sent.tokens for ch in t.form])
    tag_vocabs = {s: build_tag_vocab(train_tags[s]) for s in HIER_SCHEMES}
    store = ad.ParameterStore()
    encoder_cfg = replace(config.encoder, lstm_layers=3)
    model = HierMorphTagger(store, streams, encoder_cfg, word_vocab, char_vocab,
                            tag_vocabs, name=name, fc1_dim=config.fc1, fc2_dim=config.fc2)

    n = len(train)
    sents = list(train)
    best_acc, best_state = -1.0, None
    trajectory = []
    for epoch in range(config.epochs):
        order = streams.generator(f"order/{name}/{epoch}").permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            scale = 1.0 / len(batch)
            for si in batch:
                sent = sents[int(si)]
                logits = hier_forward(model, sent.forms, "train", streams,
                                      drop_key=f"{name}/{epoch}/{int(si)}")
                parts = []
                for s in HIER_SCHEMES:
                    ids = [tag_vocabs[s].lookup(lab)
                           for lab in train_tags[s][int(si)].labels]
                    parts.append(ad.cross_entropy(logits[s], ids))
                ad.backward(ad.mul(ad.add_n([ad.reshape(p, ()) for p in parts]), scale))
            ad.adam_step(store, lr=config.lr, betas=config.betas, eps=config.adam_eps)
        if dev is not None:
            accs = hier_accuracy(model, dev, dev_tags, streams)
            mean_acc = float(np.mean([accs[s] for s in HIER_SCHEMES]))
            trajectory.append(mean_acc)
            if mean_acc > best_acc:
                best_acc, best_state = mean_acc, store.state_dict()
    if best_state is not None:
        store.load_state_dict(best_state)
    model.history = {"dev_accuracy": trajectory,
                     "best_dev_accuracy": best_acc if best_acc >= 0 else None}
    return model


def hier_accuracy(model, treebank, tags_by_scheme, streams=None):
    """Token accuracy per task on a treebank with precomputed gold tags."""
    correct = {s: 0 for s in HIER_SCHEMES}
    total = 0
    with ad.no_grad():
        for k, sent in enumerate(treebank):
            logits = hier_forward(model, sent.forms, "eval", streams)
            total += len(sent.tokens)
            for s in HIER_SCHEMES:
                ids = np.argmax(logits[s].data, axis=1)
                gold = tags_by_scheme[s][k].labels
                correct[s] += sum(model.tag_vocabs[s].symbol(int(i)) == lab
                                  for i, lab in zip(ids, gold))
    return {s: (correct[s] / total if total else 0.0) for s in HIER_SCHEMES}


# ---------------------------------------------------------------------------
# persistence

TAGGER_SIDECAR_VERSION = 1


def save_tagger(model, path):
    ad.save_checkpoint(model.store, path)
    sidecar = {
        "format_version": TAGGER_SIDECAR_VERSION,
        "kind": "hiermorph" if isinstance(model, HierMorphTagger) else "tagger",
        "encoder_config": {f: getattr(model.config, f) for f in
                           ("word_dim", "char_dim", "char_filters", "char_kernel",
                            "lstm_hidden", "lstm_layers", "dropout")},
        "name": model.name,
        "word_vocab": model.word_vocab.to_json(),
        "char_vocab": model.char_vocab.to_json(),
        "fc1_dim": model.fc1_dim,
        "fc2_dim": model.fc2_dim,
    }
    if isinstance(model, HierMorphTagger):
        sidecar["tag_vocabs"] = {s.value: model.tag_vocabs[s].to_json()
                                 for s in HIER_SCHEMES}
    else:
        sidecar["scheme"] = model.scheme.value
        sidecar["tag_vocab"] = model.tag_vocab.to_json()
        sidecar["encoder_name"] = model.encoder.name
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_tagger(path):
    try:
        with open(str(path) + ".json", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"{path}.json: sidecar not found")
    version = sidecar.get("format_version")
    if version != TAGGER_SIDECAR_VERSION:
        raise CheckpointError(
            f"{path}.json: format version {version}, this build reads {TAGGER_SIDECAR_VERSION}")
    config = EncoderConfig(**sidecar["encoder_config"])
    store = ad.ParameterStore()
    streams = ad.SeedStreams(0)  # initial draws are overwritten by the load below
    word_vocab = Vocab.from_json(sidecar["word_vocab"])
    char_vocab = Vocab.from_json(sidecar["char_vocab"])
    if sidecar["kind"] == "hiermorph":
        vocabs = {TagScheme(k): Vocab.from_json(v)
                  for k, v in sidecar["tag_vocabs"].items()}
        model = HierMorphTagger(store, streams, config, word_vocab, char_vocab, vocabs,
                                name=sidecar["name"], fc1_dim=sidecar["fc1_dim"],
                                fc2_dim=sidecar["fc2_dim"])
    elif sidecar["kind"] == "tagger":
        model = TaggerModel(store, streams, config, word_vocab, char_vocab,
                            Vocab.from_json(sidecar["tag_vocab"]), sidecar["scheme"],
                            name=sidecar["name"], encoder_name=sidecar["encoder_name"],
                            fc1_dim=sidecar["fc1_dim"], fc2_dim=sidecar["fc2_dim"])
    else:
        raise CheckpointError(f"{path}.json: unknown kind {sidecar.get('kind')!r}")
    store.load_state_dict(ad.load_checkpoint(path))
    return model
