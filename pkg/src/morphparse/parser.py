"""Graph-based biaffine dependency parser.

Scores every (head, dependent) pair with a biaffine form over MLP-reduced
encoder states, labels arcs with per-relation biaffines, trains with
cross-entropy against gold heads/labels, and decodes either greedily
(training-time diagnostics; output may be invalid) or with the
Chu-Liu/Edmonds maximum spanning arborescence (test time, always valid).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, ContractError, NumericError
from .nn import EncoderConfig, EncoderStack, GateCombiner, affine, gate_combine, \
    linear_params, xavier_uniform
from .tagschemes import Vocab


@dataclass
class ParseTree:
    heads: list
    labels: list


@dataclass
class ArcScores:
    """Raw arc scores, head-major: scores[j][i-1] is head j over dependent i.

    Cells where head == dependent are -inf; everything else is finite.
    """
    scores: "ad.Tensor"
    n: int

    def matrix(self):
        return np.array(self.scores.data)


class BiaffineParserModel:
    """Encoder(s) + arc/label MLPs + biaffine scorers over one ParameterStore.

    ``encoders`` defaults to a single fresh stack named "encoder"; gated
    variants pass several stacks plus a GateCombiner. An optional tag
    vocabulary adds a morphological-tag embedding channel to the primary
    encoder's input.
    """

    def __init__(self, store, streams, config, word_vocab, char_vocab, relations,
                 arc_mlp=128, label_mlp=64, encoders=None, gate=None,
                 tag_vocab=None, tag_dim=64, word_vectors=None):
        if not relations:
            raise ConfigError("relation vocabulary is empty")
        if arc_mlp < 1 or label_mlp < 1:
            raise ConfigError("MLP widths must be >= 1")
        self.store = store
        self.config = config
        self.relations = list(relations)
        self.rel_index = {r: i for i, r in enumerate(self.relations)}
        if len(self.rel_index) != len(self.relations):
            raise ConfigError("duplicate relation labels")
        self.arc_mlp = arc_mlp
        self.label_mlp = label_mlp
        self.tag_vocab = tag_vocab
        self.tag_dim = tag_dim if tag_vocab is not None else 0
        self.force_primary = False
        if encoders is None:
            encoders = [EncoderStack(config, word_vocab, char_vocab, store, streams,
                                     name="encoder", extra_input_dim=self.tag_dim,
                                     word_vectors=word_vectors)]
        self.encoders = encoders
        self.gate = gate
        if gate is not None and gate.k != len(encoders):
            raise ConfigError(f"gate arity {gate.k} vs {len(encoders)} encoders")
        if tag_vocab is not None:
            rng = streams.generator("init/parser/tag_emb")
            self.tag_emb = store.add("parser/tag_emb",
                                     rng.uniform(-0.1, 0.1, (len(tag_vocab), tag_dim)))
        else:
            self.tag_emb = None

        width = config.output_dim
        self.arc_dep_w, self.arc_dep_b = linear_params(store, streams, "parser/arc_dep",
                                                       width, arc_mlp)
        self.arc_head_w, self.arc_head_b = linear_params(store, streams, "parser/arc_head",
                                                         width, arc_mlp)
        self.label_dep_w, self.label_dep_b = linear_params(store, streams, "parser/label_dep",
                                                           width, label_mlp)
        self.label_head_w, self.label_head_b = linear_params(store, streams, "parser/label_head",
                                                             width, label_mlp)
        rng = streams.generator("init/parser/arc_u")
        self.arc_u = store.add("parser/arc_u",
                               xavier_uniform(rng, (arc_mlp, arc_mlp), arc_mlp, arc_mlp))
        self.arc_prior = store.add("parser/arc_prior", np.zeros(arc_mlp))
        self.arc_bias = store.add("parser/arc_bias", np.zeros(()))
        n_rel = len(self.relations)
        rng = streams.generator("init/parser/label_u")
        self.label_u = store.add("parser/label_u",
                                 xavier_uniform(rng, (n_rel, label_mlp, label_mlp),
                                                label_mlp, label_mlp))
        self.label_prior = store.add("parser/label_prior", np.zeros((label_mlp, n_rel)))
        self.label_bias = store.add("parser/label_bias", np.zeros(n_rel))

    @property
    def dropout(self):
        return self.config.dropout

    def encode_tokens(self, forms, mode, streams, drop_key="", tag_ids=None):
        """Run every encoder and fuse; [(n+1) x output_dim]."""
        reps = []
        for enc in self.encoders:
            extra = None
            if enc.extra_input_dim:
                if tag_ids is None:
                    raise ContractError("this model expects morphological tag ids as input")
                extra = ad.gather_rows(self.tag_emb, tag_ids)
            reps.append(enc.encode_forms(forms, mode, streams, drop_key=drop_key, extra=extra))
        if self.gate is None:
            return reps[0]
        return gate_combine(reps, self.gate, force_primary=self.force_primary)


def _mlp(encoded, w, b, model, mode, streams, drop_key, tag):
    h = ad.relu(affine(encoded, w, b))
    if mode == "train" and model.dropout > 0.0:
        rng = streams.generator(f"dropout/{drop_key}/parser/{tag}")
        h = ad.dropout(h, model.dropout, True, rng)
    return h


def _label_biaffine(h_dep, h_head, u, prior, bias):
    """logits[i, r] = h_dep[i]' U_r h_head[i] + prior[:, r] . h_head[i] + bias[r]."""
    hd, hh, uu, pp, bb = h_dep.data, h_head.data, u.data, prior.data, bias.data
    value = np.einsum("nd,rde,ne->nr", hd, uu, hh) + hh @ pp + bb

    def grad_fn(g):
        if h_dep.requires_grad:
            h_dep.accumulate_grad(np.einsum("nr,rde,ne->nd", g, uu, hh))
        if h_head.requires_grad:
            h_head.accumulate_grad(np.einsum("nr,rde,nd->ne", g, uu, hd) + g @ pp.T)
        if u.requires_grad:
            u.accumulate_grad(np.einsum("nr,nd,ne->rde", g, hd, hh))
        if prior.requires_grad:
            prior.accumulate_grad(hh.T @ g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return ad.apply_op(value, (h_dep, h_head, u, prior, bias), grad_fn)


def score_arcs(encoded, model, mode="eval", streams=None, drop_key=""):
    """Biaffine score for every head j in 0..n over every dependent i in 1..n."""
    n = encoded.shape[0] - 1
    h_dep = _mlp(encoded, model.arc_dep_w, model.arc_dep_b, model, mode, streams,
                 drop_key, "arc_dep")
    h_head = _mlp(encoded, model.arc_head_w, model.arc_head_b, model, mode, streams,
                  drop_key, "arc_head")
    deps = h_dep[1:, :]
    bilinear = ad.matmul(ad.matmul(deps, model.arc_u), ad.transpose(h_head))
    prior = ad.matmul(h_head, model.arc_prior)
    dep_major = ad.add(ad.add(bilinear, prior), model.arc_bias)
    mask = np.zeros((n, n + 1))
    mask[np.arange(n), np.arange(1, n + 1)] = -np.inf  # a token cannot head itself
    dep_major = ad.add(dep_major, ad.Tensor(mask))
    return ArcScores(scores=ad.transpose(dep_major), n=n)


def score_labels(encoded, heads, model, mode="eval", streams=None, drop_key=""):
    """Relation logits [n x R] for each dependent given its head assignment."""
    n = encoded.shape[0] - 1
    heads = list(heads)
    if len(heads) != n:
        raise ContractError(f"score_labels: {n} dependents but {len(heads)} heads")
    for i, h in enumerate(heads, start=1):
        if not 0 <= h <= n:
            raise ContractError(f"score_labels: head {h} of token {i} out of range 0..{n}")
    h_dep = _mlp(encoded, model.label_dep_w, model.label_dep_b, model, mode, streams,
                 drop_key, "label_dep")
    h_head = _mlp(encoded, model.label_head_w, model.label_head_b, model, mode, streams,
                  drop_key, "label_head")
    deps = h_dep[1:, :]
    sel = ad.gather_rows(h_head, heads)
    return _label_biaffine(deps, sel, model.label_u, model.label_prior, model.label_bias)


def parser_loss_from(encoded, sentence, model, streams, drop_key=""):
    """Head + label cross-entropy on an already-encoded sentence."""
    gold_heads = sentence.heads
    arcs = score_arcs(encoded, model, "train", streams, drop_key)
    head_ce = ad.cross_entropy(ad.transpose(arcs.scores), gold_heads)
    logits = score_labels(encoded, gold_heads, model, "train", streams, drop_key)
    gold_rels = []
    for tok in sentence.tokens:
        if tok.deprel not in model.rel_index:
            raise ContractError(f"relation {tok.deprel!r} missing from the model vocabulary")
        gold_rels.append(model.rel_index[tok.deprel])
    label_ce = ad.cross_entropy(logits, gold_rels)
    loss = ad.add(head_ce, label_ce)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite loss on sentence {sentence.sent_id or '?'}")
    return loss


def parser_loss(sentence, model, streams, drop_key="", tag_ids=None):
    """Mean head cross-entropy plus mean label cross-entropy (gold heads)."""
    encoded = model.encode_tokens(sentence.forms, "train", streams, drop_key=drop_key,
                                  tag_ids=tag_ids)
    return parser_loss_from(encoded, sentence, model, streams, drop_key)


# ---------------------------------------------------------------------------
# decoding


def decode_greedy(arcs):
    """Independent argmax head per dependent; the result may be cyclic."""
    m = arcs.scores.data
    return [int(j) for j in np.argmax(m, axis=0)]


def _find_cycle(heads):
    """A cycle among nodes 1..m-1 under the head function, or None."""
    m = len(heads)
    color = np.zeros(m, dtype=np.int8)
    color[0] = 2
    for start in range(1, m):
        if color[start]:
            continue
        path = []
        v = start
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = heads[v]
        if color[v] == 1:
            cycle = path[path.index(v):]
            for u in path:
                color[u] = 2
            return cycle
        for u in path:
            color[u] = 2
    return None


def _cle(w):
    """Chu-Liu/Edmonds on a dense matrix w[j, i] = weight of arc j -> i.

    Node 0 is the root; w's diagonal and column 0 must be -inf. Returns
    the argmax arborescence as a head array (entry 0 unused).
    """
    m = w.shape[0]
    heads = np.zeros(m, dtype=np.intp)
    for i in range(1, m):
        heads[i] = int(np.argmax(w[:, i]))
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(m, dtype=bool)
    in_cycle[cycle] = True
    cycle_score = sum(w[heads[v], v] for v in cycle)
    outside = [u for u in range(m) if not in_cycle[u]]
    k = len(outside)
    c = k  # id of the contracted node
    nw = np.full((k + 1, k + 1), -np.inf)
    enter_at = {}
    leave_from = {}
    for a, u in enumerate(outside):
        for b, t in enumerate(outside):
            nw[a, b] = w[u, t]
        gains = np.array([w[u, v] - w[heads[v], v] for v in cycle])
        j = int(np.argmax(gains))
        nw[a, c] = gains[j] + cycle_score
        enter_at[a] = cycle[j]
    for b, t in enumerate(outside):
        if t == 0:
            continue
        exits = np.array([w[v, t] for v in cycle])
        j = int(np.argmax(exits))
        nw[c, b] = exits[j]
        leave_from[b] = cycle[j]

    sub = _cle(nw)
    for b in range(1, k + 1):
        h = sub[b]
        if b == c:
            broken = enter_at[h]
            heads[broken] = outside[h]
            # the rest of the cycle keeps its internal arcs
        else:
            heads[outside[b]] = leave_from[b] if h == c else outside[h]
    return heads


def decode_mst(arcs, single_root=True):
    """Maximum spanning arborescence over the arc scores.

    With ``single_root``, a multi-root optimum triggers constrained
    reruns: each token in turn is forced to be the only child of the
    root and the best-scoring result wins (ties to the lowest token).
    """
    n = arcs.n
    m = arcs.scores.data
    full = np.full((n + 1, n + 1), -np.inf)
    full[:, 1:] = m
    heads = _cle(full)
    if single_root and int(np.sum(heads[1:] == 0)) > 1:
        best_heads, best_total = None, -np.inf
        for cand in range(1, n + 1):
            constrained = full.copy()
            constrained[0, :] = -np.inf
            constrained[0, cand] = full[0, cand]
            h = _cle(constrained)
            total = sum(full[h[i], i] for i in range(1, n + 1))
            if total > best_total:
                best_heads, best_total = h, total
        heads = best_heads
    return [int(h) for h in heads[1:]]


def predict(sentence, model, streams, tag_ids=None, single_root=True):
    """Encode, MST-decode, and label one sentence at evaluation settings."""
    with ad.no_grad():
        encoded = model.encode_tokens(sentence.forms, "eval", streams, tag_ids=tag_ids)
        arcs = score_arcs(encoded, model, "eval")
        heads = decode_mst(arcs, single_root=single_root)
        logits = score_labels(encoded, heads, model, "eval")
        label_ids = np.argmax(logits.data, axis=1)
    return ParseTree(heads=heads, labels=[model.relations[int(i)] for i in label_ids])


# ---------------------------------------------------------------------------
# persistence: binary parameters plus a JSON sidecar describing the roster

SIDECAR_VERSION = 1


def _encoder_meta(enc):
    return {
        "name": enc.name,
        "word_vocab": enc.word_vocab.to_json(),
        "char_vocab": enc.char_vocab.to_json(),
        "extra_input_dim": enc.extra_input_dim,
        "adapters": {str(l): a.bottleneck for l, a in sorted(enc.adapters.items())},
    }


def _roster_params(model):
    """The subset of the store owned by this parser (auxiliary heads that
    may share the store, e.g. a multi-task tagging head, are excluded)."""
    prefixes = tuple(f"{e.name}/" for e in model.encoders) + ("parser/",)
    if model.gate is not None:
        prefixes += (f"{model.gate.name}/",)
    return {n: t.data for n, t in model.store.params.items() if n.startswith(prefixes)}


def save_model(model, path):
    """Write parameters to ``path`` and the architecture to ``path + '.json'``."""
    ad.save_checkpoint(_roster_params(model), path)
    from dataclasses import asdict
    sidecar = {
        "format_version": SIDECAR_VERSION,
        "kind": "parser",
        "encoder_config": asdict(model.config),
        "arc_mlp": model.arc_mlp,
        "label_mlp": model.label_mlp,
        "relations": model.relations,
        "encoders": [_encoder_meta(e) for e in model.encoders],
        "gate": None if model.gate is None else {"variant": model.gate.variant,
                                                 "k": model.gate.k,
                                                 "width": model.gate.width,
                                                 "name": model.gate.name},
        "tag_vocab": None if model.tag_vocab is None else model.tag_vocab.to_json(),
        "tag_dim": model.tag_dim,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    """Rebuild a parser from ``path`` and its sidecar; bit-exact parameters."""
    try:
        with open(str(path) + ".json", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"{path}.json: sidecar not found")
    version = sidecar.get("format_version")
    if version != SIDECAR_VERSION:
        raise CheckpointError(
            f"{path}.json: format version {version}, this build reads {SIDECAR_VERSION}")
    if sidecar.get("kind") != "parser":
        raise CheckpointError(f"{path}.json: kind {sidecar.get('kind')!r}, expected 'parser'")
    config = EncoderConfig(**sidecar["encoder_config"])
    store = ad.ParameterStore()
    streams = ad.SeedStreams(0)  # initial draws are overwritten by the load below
    encoders = []
    for meta in sidecar["encoders"]:
        enc = EncoderStack(config,
                           Vocab.from_json(meta["word_vocab"]),
                           Vocab.from_json(meta["char_vocab"]),
                           store, streams, name=meta["name"],
                           extra_input_dim=meta["extra_input_dim"])
        for layer, bottleneck in meta["adapters"].items():
            enc.attach_adapter(int(layer), streams, bottleneck=bottleneck)
        encoders.append(enc)
    gate = None
    if sidecar["gate"] is not None:
        g = sidecar["gate"]
        gate = GateCombiner(g["k"], g["width"], store, streams,
                            name=g.get("name", "gate"), variant=g["variant"])
    tag_vocab = None
    if sidecar["tag_vocab"] is not None:
        tag_vocab = Vocab.from_json(sidecar["tag_vocab"])
    model = BiaffineParserModel(
        store, streams, config,
        encoders[0].word_vocab, encoders[0].char_vocab, sidecar["relations"],
        arc_mlp=sidecar["arc_mlp"], label_mlp=sidecar["label_mlp"],
        encoders=encoders, gate=gate, tag_vocab=tag_vocab,
        tag_dim=sidecar["tag_dim"] or 64)
    store.load_state_dict(ad.load_checkpoint(path))
    return model
