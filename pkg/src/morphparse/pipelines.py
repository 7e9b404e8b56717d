"""Experiment orchestration: base parser, morph-tag-input variants,
multi-task training, transfer schedules, and the two gated-ensemble
pipelines (auxiliary-tagger pretraining and self-training).

Every run is a pure function of (data, config, seed): training order,
dropout masks, and parameter draws all come from named random streams,
so repeated runs produce byte-identical metrics and checkpoints.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import autodiff as ad
from .conllu import Sentence, Treebank, read_conllu, validate_heads, validate_tree, \
    write_conllu
from .errors import ConfigError, ContractError, ShapeError, TreeError
from .evaluation import AttachmentScore, relation_breakdown, report, uas_las
from .nn import EncoderConfig, EncoderStack, GateCombiner, affine, linear_params, \
    load_word_vectors
from .parser import BiaffineParserModel, parser_loss_from, predict, save_model
from .tagger import HierMorphTagger, load_tagger, predict_tags, save_tagger, \
    tag_metrics, train_hier_morph_tagger, train_tagger, extract_layers
from .tagschemes import TagScheme, Vocab, build_tag_vocab, derive_tags, \
    parse_tagged_tsv, write_tagged_tsv

VARIANTS = ("base", "oracle_mi", "predicted_mi", "mtl",
            "transeq_fe", "transeq_fea", "transeq_uf", "transeq_dl", "transeq_ft",
            "lcm", "dcst", "dcst_lcm")

LCM_SCHEMES = (TagScheme.MT, TagScheme.CT, TagScheme.LT)
DCST_SCHEMES = (TagScheme.RD, TagScheme.NC, TagScheme.RP, TagScheme.LM)


@dataclass(frozen=True)
class TrainConfig:
    """Training constants; the paper profile keeps the published values."""
    batch_size: int = 16
    epochs: int = 100
    lr: float = 0.002
    seed: int = 1
    profile: str = "paper"
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    arc_mlp: int = 128
    label_mlp: int = 64
    fc1: int = 128
    fc2: int = 64
    tag_dim: int = 64
    mtl_lambda: float = 1.0
    uf_epochs: int = 20     # unfreeze cadence of the gradual schedule
    dl_factor: float = 1.2  # per-layer lr decay of the discriminative schedule
    tagger_epochs: int = 0  # 0 means: same as epochs
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("batch_size/epochs/lr out of range")
        if self.profile not in ("paper", "desk"):
            raise ConfigError(f"unknown profile {self.profile!r}")

    @property
    def dropout(self):
        return self.encoder.dropout

    def epochs_for_taggers(self):
        return self.tagger_epochs or self.epochs

    @classmethod
    def paper(cls, seed=1, **overrides):
        return replace(cls(seed=seed), **overrides) if overrides else cls(seed=seed)

    @classmethod
    def desk(cls, seed=1, epochs=60, **overrides):
        cfg = cls(seed=seed, epochs=epochs, profile="desk", encoder=EncoderConfig.desk())
        return replace(cfg, **overrides) if overrides else cfg


@dataclass
class PipelineSpec:
    """What to run and on which data; paths or in-memory treebanks."""
    variant: str = "base"
    train: object = None
    dev: object = None
    test: object = None
    extra: object = None
    run_name: str = ""
    out_dir: object = None
    schemes: tuple = ()            # override the variant's gating scheme set
    freeze_pretrained: bool = False
    force_primary: bool = False    # diagnostic: pin the gate to the parser encoder
    warm_start: bool = False       # seed the gated parser encoder from the base run
    gate_variant: str = "softmax"
    single_root: bool = True
    punct_policy: str = "include"
    hier_checkpoint: object = None
    test_tags: object = None       # external tag TSV for predicted-MI
    word_vectors: object = None


@dataclass
class PipelineResult:
    model: object
    score: AttachmentScore
    metrics: dict
    run_dir: object
    extras: dict


# ---------------------------------------------------------------------------
# metrics schema and artifact plumbing

METRICS_SCHEMA = {
    "type": "object",
    "required": ["run_name", "variant", "seed", "uas", "las", "counts", "config_digest"],
    "properties": {
        "run_name": {"type": "string"},
        "variant": {"type": "string", "enum": list(VARIANTS)},
        "seed": {"type": "integer"},
        "uas": {"type": "number", "minimum": 0, "maximum": 100},
        "las": {"type": "number", "minimum": 0, "maximum": 100},
        "counts": {
            "type": "object",
            "required": ["total", "correct_heads", "correct_labeled"],
            "properties": {
                "total": {"type": "integer", "minimum": 0},
                "correct_heads": {"type": "integer", "minimum": 0},
                "correct_labeled": {"type": "integer", "minimum": 0},
            },
        },
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "history": {"type": "array"},
    },
    "additionalProperties": True,
}


def _load_treebank(source, what, required=True):
    if source is None:
        if required:
            raise ConfigError(f"{what} data is required for this variant")
        return None
    if isinstance(source, Treebank):
        return source
    return read_conllu(source)


def _require_valid(tb, what):
    for i, sent in enumerate(tb):
        result = validate_tree(sent)
        if not result:
            raise TreeError(f"{what} sentence {i}: {result.describe()}")


def _digest_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _config_snapshot(spec, config, data):
    snap = {
        "variant": spec.variant,
        "config": asdict(config),
        "schemes": [s.value if isinstance(s, TagScheme) else s for s in spec.schemes],
        "freeze_pretrained": spec.freeze_pretrained,
        "force_primary": spec.force_primary,
        "warm_start": spec.warm_start,
        "gate_variant": spec.gate_variant,
        "single_root": spec.single_root,
        "punct_policy": spec.punct_policy,
        "data": {k: _digest_text(write_conllu(tb)) for k, tb in data.items()
                 if tb is not None},
    }
    snap["config"]["betas"] = list(config.betas)
    return snap


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _finish_metrics(metrics):
    jsonschema.validate(metrics, METRICS_SCHEMA)
    return metrics


def _run_dir(spec):
    if spec.out_dir is None:
        return None
    path = Path(spec.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_artifacts(run_dir, snapshot, metrics, model=None, test_gold=None,
                     test_trees=None):
    if run_dir is None:
        return
    _dump_json(run_dir / "config.json", snapshot)
    _dump_json(run_dir / "metrics.json", metrics)
    if model is not None:
        save_model(model, run_dir / "model.bin")
    if test_gold is not None and test_trees is not None:
        pred = Treebank(tuple(_with_tree(s, t) for s, t in zip(test_gold, test_trees)),
                        name="predictions")
        (run_dir / "test_pred.conllu").write_text(write_conllu(pred), encoding="utf-8")


def _with_tree(sent, tree):
    toks = tuple(replace(t, head=h, deprel=l)
                 for t, h, l in zip(sent.tokens, tree.heads, tree.labels))
    return replace(sent, tokens=toks)


# ---------------------------------------------------------------------------
# shared fitting loop


def _evaluate(model, sents, streams, punct_policy="include", single_root=True,
              tags_for=None):
    trees = [predict(s, model, streams,
                     tag_ids=tags_for(i) if tags_for else None,
                     single_root=single_root)
             for i, s in enumerate(sents)]
    gold = Treebank(tuple(sents), name="eval")
    return uas_las(gold, trees, punct_policy), trees


def _fit_parser(model, train_sents, dev_sents, config, streams, loss_fn,
                loop_name="parser", on_epoch=None, dev_tags_for=None,
                punct_policy="include", single_root=True):
    """Adam training with best-dev-LAS checkpoint selection.

    ``loss_fn(si, sent, epoch, drop_key)`` returns the scalar loss for one
    sentence; gradients accumulate over each batch before one Adam step.
    """
    store = model.store
    n = len(train_sents)
    best_las, best_state = -1.0, None
    history = []
    for epoch in range(config.epochs):
        if on_epoch is not None:
            on_epoch(epoch)
        order = streams.generator(f"order/{loop_name}/{epoch}").permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            scale = 1.0 / len(batch)
            for si in batch:
                si = int(si)
                key = f"{loop_name}/{epoch}/{si}"
                loss = loss_fn(si, train_sents[si], epoch, key)
                ad.backward(ad.mul(loss, scale))
            ad.adam_step(store, lr=config.lr, betas=config.betas, eps=config.adam_eps)
        if dev_sents:
            score, _ = _evaluate(model, dev_sents, streams, punct_policy=punct_policy,
                                 single_root=single_root, tags_for=dev_tags_for)
            history.append({"epoch": epoch, "dev_uas": score.uas, "dev_las": score.las})
            if score.las > best_las:
                best_las, best_state = score.las, store.state_dict()
    if best_state is not None:
        store.load_state_dict(best_state)
    return {"dev": history, "best_dev_las": best_las if best_las >= 0 else None}


def _build_parser(config, train_tb, streams, tag_vocab=None, encoders=None,
                  gate=None, word_vectors=None, encoder_cfg=None):
    store = encoders[0].store if encoders else ad.ParameterStore()
    word_vocab = Vocab.build([t.form for s in train_tb for t in s.tokens])
    char_vocab = Vocab.build([c for s in train_tb for t in s.tokens for c in t.form])
    relations = sorted({t.deprel for s in train_tb for t in s.tokens})
    return BiaffineParserModel(
        store, streams, encoder_cfg or config.encoder, word_vocab, char_vocab,
        relations, arc_mlp=config.arc_mlp, label_mlp=config.label_mlp,
        encoders=encoders, gate=gate, tag_vocab=tag_vocab, tag_dim=config.tag_dim,
        word_vectors=word_vectors)


def _load_vectors_arg(spec):
    if spec.word_vectors is None:
        return None
    return load_word_vectors(spec.word_vectors)


# ---------------------------------------------------------------------------
# base


def run_base(spec, config, encoder_cfg=None):
    """Train and evaluate the plain biaffine parser."""
    streams = ad.SeedStreams(config.seed)
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    _require_valid(train, "train")
    data = {"train": train, "dev": dev, "test": test}
    train_sents, dev_sents = list(train), list(dev) if dev else list(train)
    test_sents = list(test)

    model = _build_parser(config, train, streams, word_vectors=_load_vectors_arg(spec),
                          encoder_cfg=encoder_cfg)

    def loss_fn(si, sent, epoch, key):
        encoded = model.encode_tokens(sent.forms, "train", streams, drop_key=key)
        return parser_loss_from(encoded, sent, model, streams, key)

    history = _fit_parser(model, train_sents, dev_sents, config, streams, loss_fn,
                          punct_policy=spec.punct_policy, single_root=spec.single_root)
    score, trees = _evaluate(model, test_sents, streams, punct_policy=spec.punct_policy,
                             single_root=spec.single_root)
    snapshot = _config_snapshot(spec, config, data)
    metrics = _finish_metrics({
        "run_name": spec.run_name or "base",
        "variant": spec.variant if spec.variant in VARIANTS else "base",
        "seed": config.seed,
        "uas": score.uas, "las": score.las, "counts": score.counts(),
        "config_digest": _digest_text(json.dumps(snapshot, sort_keys=True)),
        "history": history["dev"],
        "n_parameters": model.store.n_parameters(),
    })
    run_dir = _run_dir(spec)
    _write_artifacts(run_dir, snapshot, metrics, model, test_sents, trees)
    return PipelineResult(model, score, metrics, run_dir, {"streams": streams})


def base_star_config(config, total_layers=4):
    """The control configuration whose encoder depth matches a transferred
    3+1-layer parser, so parameter counts are comparable."""
    return replace(config, encoder=replace(config.encoder, lstm_layers=total_layers))


# ---------------------------------------------------------------------------
# morph tags as input


def run_mi(spec, config, mode):
    """Parser with a morphological-tag input channel (gold or predicted)."""
    if mode not in ("oracle", "predicted"):
        raise ConfigError(f"mi mode must be oracle or predicted, got {mode!r}")
    streams = ad.SeedStreams(config.seed)
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    _require_valid(train, "train")
    data = {"train": train, "dev": dev, "test": test}
    train_sents, dev_sents = list(train), list(dev) if dev else list(train)
    test_sents = list(test)

    def mt_of(sents):
        return [derive_tags(s, TagScheme.MT) for s in sents]

    train_mt = mt_of(train_sents)
    tag_vocab = build_tag_vocab(train_mt, min_freq=1)
    model = _build_parser(config, train, streams, tag_vocab=tag_vocab,
                          word_vectors=_load_vectors_arg(spec))
    train_ids = [[tag_vocab.lookup(l) for l in seq.labels] for seq in train_mt]

    extras = {}
    mt_accuracy = None
    if mode == "oracle":
        dev_tagseqs = mt_of(dev_sents)
        test_tagseqs = mt_of(test_sents)
    else:
        gold_test = mt_of(test_sents)
        if spec.test_tags is not None:
            text = Path(spec.test_tags).read_text(encoding="utf-8")
            _, test_tagseqs = parse_tagged_tsv(text, TagScheme.MT)
            if len(test_tagseqs) != len(test_sents):
                raise ConfigError(
                    f"external tag file covers {len(test_tagseqs)} sentences, "
                    f"test has {len(test_sents)}")
            dev_tagseqs = mt_of(dev_sents)  # no external dev tags; fall back to gold
        else:
            tagger_cfg = replace(config, epochs=config.epochs_for_taggers())
            pairs = [(list(s.forms), seq) for s, seq in zip(train_sents, train_mt)]
            dev_pairs = [(list(s.forms), seq)
                         for s, seq in zip(dev_sents, mt_of(dev_sents))]
            mt_tagger = train_tagger(pairs, dev_pairs, TagScheme.MT, tagger_cfg,
                                     streams=streams, name="mi_tagger")
            extras["mt_tagger"] = mt_tagger
            dev_tagseqs = predict_tags(mt_tagger, [s.forms for s in dev_sents])
            test_tagseqs = predict_tags(mt_tagger, [s.forms for s in test_sents])
        mt_accuracy = tag_metrics(test_tagseqs, gold_test)["accuracy"]

    dev_ids = [[tag_vocab.lookup(l) for l in seq.labels] for seq in dev_tagseqs]
    test_ids = [[tag_vocab.lookup(l) for l in seq.labels] for seq in test_tagseqs]

    def loss_fn(si, sent, epoch, key):
        encoded = model.encode_tokens(sent.forms, "train", streams, drop_key=key,
                                      tag_ids=train_ids[si])
        return parser_loss_from(encoded, sent, model, streams, key)

    history = _fit_parser(model, train_sents, dev_sents, config, streams, loss_fn,
                          dev_tags_for=lambda i: dev_ids[i],
                          punct_policy=spec.punct_policy, single_root=spec.single_root)
    score, trees = _evaluate(model, test_sents, streams, punct_policy=spec.punct_policy,
                             single_root=spec.single_root,
                             tags_for=lambda i: test_ids[i])
    snapshot = _config_snapshot(spec, config, data)
    metrics = {
        "run_name": spec.run_name or f"{mode}_mi",
        "variant": f"{mode}_mi",
        "seed": config.seed,
        "uas": score.uas, "las": score.las, "counts": score.counts(),
        "config_digest": _digest_text(json.dumps(snapshot, sort_keys=True)),
        "history": history["dev"],
        "tag_mode": mode,
    }
    if mt_accuracy is not None:
        metrics["mt_accuracy"] = mt_accuracy
    metrics = _finish_metrics(metrics)
    run_dir = _run_dir(spec)
    _write_artifacts(run_dir, snapshot, metrics, model, test_sents, trees)
    return PipelineResult(model, score, metrics, run_dir, extras)


# ---------------------------------------------------------------------------
# multi-task: parsing + case tagging on a shared encoder


def run_mtl(spec, config):
    """Joint loss parser + lambda * case-tagging; the tag head is train-only.

    With lambda = 0 the auxiliary branch is skipped entirely and the run
    reduces to run_base exactly (same trajectory under one seed).
    """
    streams = ad.SeedStreams(config.seed)
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    _require_valid(train, "train")
    data = {"train": train, "dev": dev, "test": test}
    train_sents, dev_sents = list(train), list(dev) if dev else list(train)
    test_sents = list(test)
    lam = config.mtl_lambda

    model = _build_parser(config, train, streams, word_vectors=_load_vectors_arg(spec))
    store = model.store
    ct_seqs = [derive_tags(s, TagScheme.CT) for s in train_sents]
    ct_vocab = build_tag_vocab(ct_seqs)
    ct_ids = [[ct_vocab.lookup(l) for l in seq.labels] for seq in ct_seqs]
    width = model.config.output_dim
    f1 = linear_params(store, streams, "cthead/fc1", width, config.fc1)
    f2 = linear_params(store, streams, "cthead/fc2", config.fc1, config.fc2)
    out = linear_params(store, streams, "cthead/out", config.fc2, len(ct_vocab))

    def ct_logits(encoded, mode, key):
        h = encoded[1:, :]
        for tag, (w, b) in (("fc1", f1), ("fc2", f2)):
            h = ad.relu(affine(h, w, b))
            if mode == "train" and config.dropout > 0.0:
                rng = streams.generator(f"dropout/{key}/cthead/{tag}")
                h = ad.dropout(h, config.dropout, True, rng)
        w, b = out
        return affine(h, w, b)

    def loss_fn(si, sent, epoch, key):
        encoded = model.encode_tokens(sent.forms, "train", streams, drop_key=key)
        loss = parser_loss_from(encoded, sent, model, streams, key)
        if lam != 0.0:
            aux = ad.cross_entropy(ct_logits(encoded, "train", key), ct_ids[si])
            loss = ad.add(loss, ad.mul(aux, lam))
        return loss

    history = _fit_parser(model, train_sents, dev_sents, config, streams, loss_fn,
                          punct_policy=spec.punct_policy, single_root=spec.single_root)

    # train-set tag accuracy of the auxiliary head, for the record
    ct_correct = ct_total = 0
    if lam != 0.0:
        with ad.no_grad():
            for si, sent in enumerate(train_sents):
                encoded = model.encode_tokens(sent.forms, "eval", streams)
                ids = np.argmax(ct_logits(encoded, "eval", "").data, axis=1)
                ct_total += len(ids)
                ct_correct += int(np.sum(ids == np.asarray(ct_ids[si])))

    score, trees = _evaluate(model, test_sents, streams, punct_policy=spec.punct_policy,
                             single_root=spec.single_root)
    snapshot = _config_snapshot(spec, config, data)
    metrics = _finish_metrics({
        "run_name": spec.run_name or "mtl",
        "variant": "mtl",
        "seed": config.seed,
        "uas": score.uas, "las": score.las, "counts": score.counts(),
        "config_digest": _digest_text(json.dumps(snapshot, sort_keys=True)),
        "history": history["dev"],
        "mtl_lambda": lam,
        "ct_train_accuracy": (ct_correct / ct_total) if ct_total else None,
    })
    run_dir = _run_dir(spec)
    _write_artifacts(run_dir, snapshot, metrics, model, test_sents, trees)
    return PipelineResult(model, score, metrics, run_dir, {})


# ---------------------------------------------------------------------------
# transfer from the hierarchical morphological tagger

TRANSEQ_SCHEDULES = ("FE", "FEA", "UF", "DL", "FT")


def run_transeq(spec, config, schedule):
    """Parser whose encoder starts from 3 pretrained BiLSTM layers + 1 fresh."""
    schedule = schedule.upper()
    if schedule not in TRANSEQ_SCHEDULES:
        raise ConfigError(f"unknown schedule {schedule!r}, pick one of {TRANSEQ_SCHEDULES}")
    streams = ad.SeedStreams(config.seed)
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    _require_valid(train, "train")
    data = {"train": train, "dev": dev, "test": test}
    train_sents, dev_sents = list(train), list(dev) if dev else list(train)
    test_sents = list(test)

    hier = spec.hier_checkpoint
    hier_history = None
    if hier is None:
        extra = _load_treebank(spec.extra, "extra (to train the morphological tagger)")
        tagger_cfg = replace(config, epochs=config.epochs_for_taggers())
        hier = train_hier_morph_tagger(extra, tagger_cfg, dev=dev, streams=streams)
        hier_history = hier.history
        data["extra"] = extra
    elif not isinstance(hier, HierMorphTagger):
        hier = load_tagger(hier)
        if not isinstance(hier, HierMorphTagger):
            raise ConfigError(f"{spec.hier_checkpoint}: not a hierarchical tagger checkpoint")
    if hier.config.lstm_hidden != config.encoder.lstm_hidden:
        raise ConfigError(
            f"pretrained hidden size {hier.config.lstm_hidden} != parser "
            f"{config.encoder.lstm_hidden}")

    enc_cfg = replace(config.encoder, lstm_layers=4)  # 3 transferred + 1 fresh on top
    word_vocab = Vocab.build([t.form for s in train for t in s.tokens])
    char_vocab = Vocab.build([c for s in train for t in s.tokens for c in t.form])
    store = ad.ParameterStore()
    encoder = EncoderStack(enc_cfg, word_vocab, char_vocab, store, streams, name="encoder")
    if schedule == "FEA":
        encoder.attach_adapter(0, streams, bottleneck=256)
        encoder.attach_adapter(1, streams, bottleneck=256)

    transplant = {}
    for l, per_dir in enumerate(extract_layers(hier)):
        for direction, arrs in per_dir.items():
            for part, arr in arrs.items():
                transplant[f"encoder/lstm{l}/{direction}/{part}"] = arr
    try:
        store.load_state_dict(transplant)
    except ShapeError as e:
        raise ConfigError(f"pretrained layer shape mismatch: {e}")

    relations = sorted({t.deprel for s in train for t in s.tokens})
    model = BiaffineParserModel(store, streams, enc_cfg, word_vocab, char_vocab,
                                relations, arc_mlp=config.arc_mlp,
                                label_mlp=config.label_mlp, encoders=[encoder])

    pretrained = [f"encoder/lstm{l}/" for l in range(3)]
    on_epoch = None
    if schedule in ("FE", "FEA"):
        for prefix in pretrained:
            store.freeze(prefix)
    elif schedule == "UF":
        for prefix in pretrained:
            store.freeze(prefix)
        cadence = config.uf_epochs
        unfreeze_at = {cadence * (k + 1): pretrained[2 - k] for k in range(3)}

        def on_epoch(epoch):
            prefix = unfreeze_at.get(epoch)
            if prefix is not None:
                store.unfreeze(prefix)
    elif schedule == "DL":
        for k, prefix in enumerate(pretrained):
            store.set_lr_scale(prefix, 1.0 / (config.dl_factor ** (2 - k)))

    def loss_fn(si, sent, epoch, key):
        encoded = model.encode_tokens(sent.forms, "train", streams, drop_key=key)
        return parser_loss_from(encoded, sent, model, streams, key)

    history = _fit_parser(model, train_sents, dev_sents, config, streams, loss_fn,
                          on_epoch=on_epoch, punct_policy=spec.punct_policy,
                          single_root=spec.single_root)
    score, trees = _evaluate(model, test_sents, streams, punct_policy=spec.punct_policy,
                             single_root=spec.single_root)
    snapshot = _config_snapshot(spec, config, data)
    metrics = _finish_metrics({
        "run_name": spec.run_name or f"transeq_{schedule.lower()}",
        "variant": f"transeq_{schedule.lower()}",
        "seed": config.seed,
        "uas": score.uas, "las": score.las, "counts": score.counts(),
        "config_digest": _digest_text(json.dumps(snapshot, sort_keys=True)),
        "history": history["dev"],
        "schedule": schedule,
        "n_parameters": store.n_parameters(),
        "hier_tagger": hier_history,
    })
    run_dir = _run_dir(spec)
    _write_artifacts(run_dir, snapshot, metrics, model, test_sents, trees)
    return PipelineResult(model, score, metrics, run_dir, {"hier": hier})


# ---------------------------------------------------------------------------
# gated ensembles: auxiliary-tagger pretraining and self-training


def _scheme_pairs(sents, scheme, tree_source=None):
    """(forms, TagSequence) pairs; tree-derived schemes read ``tree_source``."""
    basis = tree_source if tree_source is not None else sents
    return [(list(s.forms), derive_tags(b, scheme)) for s, b in zip(sents, basis)]


def _auto_parse(sents, base_model, streams, single_root=True):
    """Re-annotate sentences with the base parser's predicted trees."""
    out = []
    for s in sents:
        tree = predict(s, base_model, streams, single_root=single_root)
        out.append(_with_tree(s, tree))
    return out


def _gated_run(spec, config, schemes, tagger_data, primary_init=None):
    """Common tail of the gated pipelines: train taggers on prepared data,
    fuse their encoders with a fresh parser encoder, train on labeled data.

    ``tagger_data`` maps scheme -> (train_pairs, dev_pairs); ``primary_init``
    optionally seeds the parser-side encoder (warm start from the base run).
    """
    streams = ad.SeedStreams(config.seed)
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    train_sents, dev_sents = list(train), list(dev) if dev else list(train)
    test_sents = list(test)

    tagger_cfg = replace(config, epochs=config.epochs_for_taggers())
    taggers = {}
    for scheme in schemes:
        pairs, dev_pairs = tagger_data[scheme]
        taggers[scheme] = train_tagger(pairs, dev_pairs, scheme, tagger_cfg,
                                       streams=streams, name=f"aux_{scheme.value}",
                                       encoder_name=f"aux_{scheme.value}")

    store = ad.ParameterStore()
    primary = EncoderStack(config.encoder,
                           Vocab.build([t.form for s in train for t in s.tokens]),
                           Vocab.build([c for s in train for t in s.tokens
                                        for c in t.form]),
                           store, streams, name="encoder")
    if primary_init is not None:
        store.load_state_dict(primary_init)
    encoders = [primary]
    for scheme in schemes:
        aux = taggers[scheme]
        enc = EncoderStack(config.encoder, aux.word_vocab, aux.char_vocab, store,
                           streams, name=f"aux_{scheme.value}")
        # copy only encoder weights; the tagger's classification head stays behind
        weights = {n: aux.store.params[n].data for n in store.names()
                   if n.startswith(f"aux_{scheme.value}/")}
        store.load_state_dict(weights)
        encoders.append(enc)
    gate = GateCombiner(len(encoders), config.encoder.output_dim, store, streams,
                        name="gate", variant=spec.gate_variant)
    relations = sorted({t.deprel for s in train for t in s.tokens})
    model = BiaffineParserModel(store, streams, config.encoder, primary.word_vocab,
                                primary.char_vocab, relations,
                                arc_mlp=config.arc_mlp, label_mlp=config.label_mlp,
                                encoders=encoders, gate=gate)
    model.force_primary = spec.force_primary
    if spec.freeze_pretrained:
        for scheme in schemes:
            store.freeze(f"aux_{scheme.value}/")

    def loss_fn(si, sent, epoch, key):
        encoded = model.encode_tokens(sent.forms, "train", streams, drop_key=key)
        return parser_loss_from(encoded, sent, model, streams, key)

    history = _fit_parser(model, train_sents, dev_sents, config, streams, loss_fn,
                          punct_policy=spec.punct_policy, single_root=spec.single_root)
    score, trees = _evaluate(model, test_sents, streams, punct_policy=spec.punct_policy,
                             single_root=spec.single_root)
    return model, taggers, score, trees, history, streams, test_sents


def run_lcm(spec, config):
    """Gated ensemble over taggers for the morphology-derived schemes.

    The base parser supplies predicted trees for the relation-tagging
    scheme (no gold trees are consumed by any tagger); the morphological
    schemes read gold features, which the extra data must carry.
    """
    schemes = tuple(TagScheme(s) for s in spec.schemes) or LCM_SCHEMES
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    extra = _load_treebank(spec.extra, "extra")
    _require_valid(train, "train")
    data = {"train": train, "dev": dev, "test": test, "extra": extra}

    run_dir = _run_dir(spec)
    base_spec = replace_spec(spec, variant="base",
                             run_name=(spec.run_name or "lcm") + "-base",
                             out_dir=(run_dir / "base") if run_dir else None)
    base_res = run_base(base_spec, config)
    base_model = base_res.model
    streams0 = base_res.extras["streams"]

    dev_sents = list(dev) if dev else list(train)
    auto_train = _auto_parse(list(train), base_model, streams0, spec.single_root)
    auto_extra = _auto_parse(list(extra), base_model, streams0, spec.single_root)
    auto_dev = _auto_parse(dev_sents, base_model, streams0, spec.single_root)

    tagger_train_sents = list(train) + list(extra)
    tagger_train_trees = auto_train + auto_extra
    tagger_data = {}
    for scheme in schemes:
        tree_source = tagger_train_trees if scheme in (TagScheme.LT,) else None
        pairs = _scheme_pairs(tagger_train_sents, scheme, tree_source)
        dev_tree = auto_dev if scheme in (TagScheme.LT,) else None
        dev_pairs = _scheme_pairs(dev_sents, scheme, dev_tree)
        tagger_data[scheme] = (pairs, dev_pairs)

    primary_init = None
    if spec.warm_start:
        primary_init = {n: t.data.copy() for n, t in base_model.store.params.items()
                        if n.startswith("encoder/")}
    model, taggers, score, trees, history, streams, test_sents = _gated_run(
        spec, config, schemes, tagger_data, primary_init)

    snapshot = _config_snapshot(spec, config, data)
    metrics = _finish_metrics({
        "run_name": spec.run_name or "lcm",
        "variant": "lcm",
        "seed": config.seed,
        "uas": score.uas, "las": score.las, "counts": score.counts(),
        "config_digest": _digest_text(json.dumps(snapshot, sort_keys=True)),
        "history": history["dev"],
        "schemes": [s.value for s in schemes],
        "base": {"uas": base_res.score.uas, "las": base_res.score.las},
        "taggers": {s.value: taggers[s].history for s in schemes},
    })
    _write_artifacts(run_dir, snapshot, metrics, model, test_sents, trees)
    if run_dir is not None:
        _write_tag_datasets(run_dir, schemes, tagger_data)
    return PipelineResult(model, score, metrics, run_dir,
                          {"base": base_res, "taggers": taggers})


def run_dcst(spec, config, scheme_set=None, variant_name="dcst"):
    """Self-training: auto-parse raw extra data, pretrain scheme taggers on
    the auto-trees, gate their encoders into a fresh parser."""
    schemes = tuple(TagScheme(s) for s in (scheme_set or spec.schemes or DCST_SCHEMES))
    train = _load_treebank(spec.train, "train")
    dev = _load_treebank(spec.dev, "dev", required=False)
    test = _load_treebank(spec.test, "test")
    extra = _load_treebank(spec.extra, "extra (unlabeled)")
    _require_valid(train, "train")
    data = {"train": train, "dev": dev, "test": test, "extra": extra}

    run_dir = _run_dir(spec)
    base_spec = replace_spec(spec, variant="base",
                             run_name=(spec.run_name or variant_name) + "-base",
                             out_dir=(run_dir / "base") if run_dir else None)
    base_res = run_base(base_spec, config)
    base_model = base_res.model
    streams0 = base_res.extras["streams"]

    auto_extra = _auto_parse(list(extra), base_model, streams0, spec.single_root)
    auto_valid = sum(bool(validate_heads([t.head for t in s.tokens]))
                     for s in auto_extra)
    if auto_valid != len(auto_extra):
        raise ContractError("auto-parsed trees must be valid; decoding is broken")

    # hold out a deterministic tail of the extra data for tagger selection
    n_dev = max(1, len(auto_extra) // 10)
    tagger_train = auto_extra[:-n_dev]
    tagger_dev = auto_extra[-n_dev:]
    tagger_data = {}
    for scheme in schemes:
        pairs = _scheme_pairs(tagger_train, scheme)
        dev_pairs = _scheme_pairs(tagger_dev, scheme)
        tagger_data[scheme] = (pairs, dev_pairs)

    primary_init = None
    if spec.warm_start:
        primary_init = {n: t.data.copy() for n, t in base_model.store.params.items()
                        if n.startswith("encoder/")}
    model, taggers, score, trees, history, streams, test_sents = _gated_run(
        spec, config, schemes, tagger_data, primary_init)

    snapshot = _config_snapshot(spec, config, data)
    metrics = _finish_metrics({
        "run_name": spec.run_name or variant_name,
        "variant": variant_name,
        "seed": config.seed,
        "uas": score.uas, "las": score.las, "counts": score.counts(),
        "config_digest": _digest_text(json.dumps(snapshot, sort_keys=True)),
        "history": history["dev"],
        "schemes": [s.value for s in schemes],
        "base": {"uas": base_res.score.uas, "las": base_res.score.las},
        "auto_parsed": {"total": len(auto_extra), "valid": auto_valid},
        "taggers": {s.value: taggers[s].history for s in schemes},
    })
    _write_artifacts(run_dir, snapshot, metrics, model, test_sents, trees)
    if run_dir is not None:
        _write_tag_datasets(run_dir, schemes, tagger_data)
    return PipelineResult(model, score, metrics, run_dir,
                          {"base": base_res, "taggers": taggers})


def _write_tag_datasets(run_dir, schemes, tagger_data):
    tags_dir = run_dir / "tags"
    tags_dir.mkdir(exist_ok=True)
    for scheme in schemes:
        pairs, _ = tagger_data[scheme]
        text = write_tagged_tsv([f for f, _ in pairs], [s for _, s in pairs])
        (tags_dir / f"{scheme.value}.tsv").write_text(text, encoding="utf-8")


def replace_spec(spec, **changes):
    return replace(spec, **changes)


# ---------------------------------------------------------------------------
# dispatch, size ablation


def run_pipeline(spec, config):
    v = spec.variant
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {v!r}, pick one of {VARIANTS}")
    if v == "base":
        return run_base(spec, config)
    if v in ("oracle_mi", "predicted_mi"):
        return run_mi(spec, config, v.split("_")[0])
    if v == "mtl":
        return run_mtl(spec, config)
    if v.startswith("transeq_"):
        return run_transeq(spec, config, v.split("_")[1])
    if v == "lcm":
        return run_lcm(spec, config)
    if v == "dcst":
        return run_dcst(spec, config)
    if v == "dcst_lcm":
        return run_dcst(spec, config, scheme_set=LCM_SCHEMES, variant_name="dcst_lcm")
    raise ConfigError(f"unhandled variant {v!r}")


def run_size_ablation(spec, config, sizes):
    """One full pipeline run per training-set prefix size."""
    train = _load_treebank(spec.train, "train")
    rows, results = [], []
    for size in sizes:
        if size > len(train):
            raise ConfigError(f"size {size} exceeds the {len(train)}-sentence train set")
        sub = Treebank(tuple(list(train)[:size]), name=f"{train.name}[:{size}]")
        sub_spec = replace_spec(
            spec, train=sub,
            run_name=f"{spec.run_name or spec.variant}-n{size}",
            out_dir=(Path(spec.out_dir) / f"n{size}") if spec.out_dir else None)
        res = run_pipeline(sub_spec, config)
        rows.append({"size": size, "uas": res.score.uas, "las": res.score.las})
        results.append(res)
    text, _ = report([(f"n={r['size']}",
                       AttachmentScore(r["uas"], r["las"], 0, 0, 0)) for r in rows])
    return rows, text, results
