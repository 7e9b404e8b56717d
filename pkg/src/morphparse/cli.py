"""Command-line surface: every subcommand is a thin, seeded wrapper over
the library so whole experiments are reproducible from a shell line.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, configs,
checkpoints, trees), 3 numeric error. Logs go to stderr, results to files
(or stdout for report-style commands).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import autodiff as ad
from .checks import ALL_COMPONENTS, GRAD_TOL, gradient_report
from .conllu import Treebank, gen_synthetic, load_grammar, read_conllu, save_conllu, \
    validate_heads
from .errors import CheckpointError, ConfigError, ContractError, MorphparseError, \
    NumericError, ParseError, ShapeError, TreeError
from .evaluation import AttachmentScore, relation_breakdown, report, uas_las
from .parser import ParseTree, load_model, predict
from .pipelines import PipelineSpec, TrainConfig, VARIANTS, run_base, run_pipeline, \
    run_size_ablation
from .tagger import save_tagger, train_tagger
from .tagschemes import TagScheme, derive_treebank_tags, parse_tagged_tsv, \
    write_tagged_tsv

log = logging.getLogger("morphparse")

RUN_DIR_ENV = "MORPHPARSE_RUN_DIR"


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract reserves 2 for data
    # errors, so usage failures are rerouted through an exception.
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config file merging: explicit flags win, then --config values, then defaults

_TRAIN_DEFAULTS = {
    "profile": "desk",
    "seed": 1,
    "epochs": None,
    "tagger_epochs": None,
    "batch_size": None,
    "lr": None,
    "dropout": None,
    "mtl_lambda": None,
    "uf_epochs": None,
}


def _load_config_file(path):
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"--config {path}: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"--config {path}: expected a JSON object")
    return cfg


def _merge(args, defaults):
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for key in file_cfg:
        if key not in defaults:
            raise ConfigError(f"--config: unknown key {key!r}")
    merged = {}
    for key, default in defaults.items():
        val = getattr(args, key, None)
        if val is None:
            val = file_cfg.get(key, default)
        merged[key] = val
    return merged


def _train_config(args):
    merged = _merge(args, _TRAIN_DEFAULTS)
    seed = int(merged["seed"])
    if merged["profile"] == "paper":
        cfg = TrainConfig.paper(seed=seed)
    elif merged["profile"] == "desk":
        cfg = TrainConfig.desk(seed=seed)
    else:
        raise ConfigError(f"--profile: unknown profile {merged['profile']!r}")
    over = {}
    for key in ("epochs", "tagger_epochs", "batch_size", "uf_epochs"):
        if merged[key] is not None:
            over[key] = int(merged[key])
    for key in ("lr", "mtl_lambda"):
        if merged[key] is not None:
            over[key] = float(merged[key])
    if merged["dropout"] is not None:
        over["encoder"] = replace(cfg.encoder, dropout=float(merged["dropout"]))
    return replace(cfg, **over) if over else cfg, merged


def _scheme(value):
    try:
        return TagScheme(value.upper())
    except ValueError:
        raise ConfigError(f"--scheme: unknown scheme {value!r}, "
                          f"pick from {sorted(s.value for s in TagScheme)}")


def _write_snapshot(out_path, command, payload):
    snap = {"command": command, "resolved": payload}
    Path(str(out_path) + ".run.json").write_text(
        json.dumps(snap, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args, command):
    explicit = getattr(args, "out_dir", None)
    if explicit:
        return explicit
    root = os.environ.get(RUN_DIR_ENV)
    if root:
        return str(Path(root) / (getattr(args, "run_name", "") or command))
    return None


# ---------------------------------------------------------------------------
# subcommands


def cmd_derive_tags(args):
    scheme = _scheme(args.scheme)
    tb = read_conllu(args.infile)
    caps = {}
    if args.cap_depth is not None:
        caps["cap_depth"] = args.cap_depth
    if args.cap_children is not None:
        caps["cap_children"] = args.cap_children
    seqs = derive_treebank_tags(tb, scheme, **caps)
    text = write_tagged_tsv([s.forms for s in tb], seqs)
    Path(args.out).write_text(text, encoding="utf-8")
    _write_snapshot(args.out, "derive-tags",
                    {"scheme": scheme.value, "in": str(args.infile), **caps})
    log.info("derive-tags: %d sentences -> %s", len(tb), args.out)
    return 0


def cmd_gen_synthetic(args):
    grammar = load_grammar(args.grammar) if args.grammar else None
    tb = gen_synthetic(args.seed, args.n, grammar=grammar)
    save_conllu(tb, args.out)
    _write_snapshot(args.out, "gen-synthetic",
                    {"seed": args.seed, "n": args.n,
                     "grammar": str(args.grammar) if args.grammar else "builtin"})
    log.info("gen-synthetic: %d sentences -> %s", len(tb), args.out)
    return 0


def cmd_train_tagger(args):
    scheme = _scheme(args.scheme)
    config, merged = _train_config(args)
    train_tb = read_conllu(args.train)
    dev_tb = read_conllu(args.dev) if args.dev else None
    pairs = [(s.forms, q) for s, q in zip(train_tb, derive_treebank_tags(train_tb, scheme))]
    dev_pairs = None
    if dev_tb is not None:
        dev_pairs = [(s.forms, q)
                     for s, q in zip(dev_tb, derive_treebank_tags(dev_tb, scheme))]
    model = train_tagger(pairs, dev_pairs, scheme, config)
    out_dir = _out_dir(args, "train-tagger")
    if out_dir is None:
        raise ConfigError(f"--out-dir (or ${RUN_DIR_ENV}) is required to save the tagger")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tagger(model, out / "tagger.bin")
    _write_snapshot(out / "tagger.bin", "train-tagger",
                    {"scheme": scheme.value, "train": str(args.train),
                     "dev": str(args.dev) if args.dev else None, **merged})
    acc = model.history["best_dev_accuracy"]
    log.info("train-tagger %s: best dev accuracy %s -> %s", scheme.value,
             "n/a" if acc is None else f"{acc:.4f}", out / "tagger.bin")
    print(json.dumps({"scheme": scheme.value, "history": model.history},
                     indent=2, sort_keys=True))
    return 0


def _pipeline_spec(args, variant=None):
    schemes = tuple(_scheme(s) for s in args.schemes.split(",")) if getattr(
        args, "schemes", None) else ()
    return PipelineSpec(
        variant=variant or args.variant,
        train=args.train, dev=getattr(args, "dev", None),
        test=getattr(args, "test", None), extra=getattr(args, "extra", None),
        run_name=getattr(args, "run_name", "") or "",
        out_dir=_out_dir(args, variant or args.variant),
        schemes=schemes,
        freeze_pretrained=bool(getattr(args, "freeze_pretrained", False)),
        force_primary=bool(getattr(args, "force_primary", False)),
        warm_start=bool(getattr(args, "warm_start", False)),
        gate_variant=getattr(args, "gate", None) or "softmax",
        single_root=not getattr(args, "multi_root", False),
        punct_policy=getattr(args, "punct", None) or "include",
        hier_checkpoint=getattr(args, "hier_checkpoint", None),
        test_tags=getattr(args, "test_tags", None),
        word_vectors=getattr(args, "word_vectors", None),
    )


def cmd_train_parser(args):
    config, _ = _train_config(args)
    spec = _pipeline_spec(args, variant="base")
    eval_set = "test"
    if spec.test is None:
        spec = replace(spec, test=args.dev or args.train)
        eval_set = "dev" if args.dev else "train"
    out_dir = _out_dir(args, "train-parser")
    if out_dir is None:
        raise ConfigError(f"--out-dir (or ${RUN_DIR_ENV}) is required to save the parser")
    spec = replace(spec, out_dir=out_dir)
    result = run_base(spec, config)
    result.metrics["eval_set"] = eval_set
    log.info("train-parser: UAS %.2f LAS %.2f (%s) -> %s", result.score.uas,
             result.score.las, eval_set, result.run_dir)
    print(json.dumps(result.metrics, indent=2, sort_keys=True))
    return 0


def cmd_parse(args):
    model = load_model(args.model)
    tb = read_conllu(args.infile)
    tag_seqs = None
    if model.tag_vocab is not None:
        if not args.tags:
            raise ConfigError("this checkpoint takes tag inputs; provide --tags TSV")
        _, tag_seqs = parse_tagged_tsv(Path(args.tags).read_text(encoding="utf-8"),
                                       TagScheme.MT)
        if len(tag_seqs) != len(tb):
            raise ConfigError(f"--tags: {len(tag_seqs)} sentences, input has {len(tb)}")
    streams = ad.SeedStreams(args.seed)
    out_sents = []
    for i, sent in enumerate(tb):
        ids = None
        if tag_seqs is not None:
            ids = [model.tag_vocab.lookup(l) for l in tag_seqs[i].labels]
        tree = predict(sent, model, streams, tag_ids=ids,
                       single_root=not args.multi_root)
        check = validate_heads(tree.heads)
        if not check:
            raise ContractError(f"predicted tree {i} invalid: {check.describe()}")
        toks = tuple(replace(t, head=h, deprel=l)
                     for t, h, l in zip(sent.tokens, tree.heads, tree.labels))
        out_sents.append(replace(sent, tokens=toks))
    save_conllu(Treebank(tuple(out_sents), name="predictions"), args.out)
    _write_snapshot(args.out, "parse",
                    {"model": str(args.model), "in": str(args.infile),
                     "seed": args.seed, "single_root": not args.multi_root})
    log.info("parse: %d sentences -> %s", len(out_sents), args.out)
    return 0


def cmd_evaluate(args):
    gold = read_conllu(args.gold)
    pred_tb = read_conllu(args.pred)
    trees = [ParseTree(list(s.heads), list(s.deprels)) for s in pred_tb]
    score = uas_las(gold, trees, args.punct)
    breakdowns = {args.name: relation_breakdown(gold, trees)} if args.breakdown else None
    text, entries = report([(args.name, score)], breakdowns)
    print(text)
    if args.out:
        payload = {"results": entries,
                   "config": {"gold": str(args.gold), "pred": str(args.pred),
                              "punct": args.punct}}
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    return 0


def cmd_pipeline(args):
    config, _ = _train_config(args)
    spec = _pipeline_spec(args)
    result = run_pipeline(spec, config)
    log.info("pipeline %s: UAS %.2f LAS %.2f", spec.variant, result.score.uas,
             result.score.las)
    print(json.dumps(result.metrics, indent=2, sort_keys=True))
    return 0


def cmd_size_ablation(args):
    config, _ = _train_config(args)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        raise ConfigError(f"--sizes: expected comma-separated integers, got {args.sizes!r}")
    if not sizes:
        raise ConfigError("--sizes: no sizes given")
    spec = _pipeline_spec(args, variant=args.variant)
    rows, text, _ = run_size_ablation(spec, config, sizes)
    print(text)
    out_dir = _out_dir(args, "size-ablation")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


_GRAD_TARGETS = {
    "biaff": ("char_cnn", "bilstm", "biaffine", "gate", "gate_sigmoid", "adapter",
              "parser"),
    "tagger": ("char_cnn", "bilstm", "tagger"),
    "all": ALL_COMPONENTS,
}


def cmd_grad_check(args):
    components = _GRAD_TARGETS[args.model]
    errors = gradient_report(components, seed=args.seed, samples=args.samples)
    worst = max(errors.values())
    for comp in components:
        print(f"{comp:14s} {errors[comp]:.3e}")
    print(f"{'max':14s} {worst:.3e}  (tolerance {GRAD_TOL:.0e})")
    if worst > GRAD_TOL:
        raise NumericError(f"max relative gradient error {worst:.3e} exceeds {GRAD_TOL:.0e}")
    return 0


def cmd_inspect_checkpoint(args):
    params = ad.load_checkpoint(args.infile)
    sidecar_path = Path(str(args.infile) + ".json")
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        print(f"kind: {sidecar.get('kind', '?')}  "
              f"format_version: {sidecar.get('format_version', '?')}")
    total = 0
    for name in sorted(params):
        arr = params[name]
        total += arr.size
        print(f"{name:40s} {str(arr.shape):16s} {arr.size}")
    print(f"{'total':40s} {'':16s} {total}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_train_flags(p, taggers=False):
    p.add_argument("--config", help="JSON config merged under explicit flags")
    p.add_argument("--profile", choices=("desk", "paper"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    if taggers:
        p.add_argument("--tagger-epochs", dest="tagger_epochs", type=int)


def _add_data_flags(p, extra=False, test=True):
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    if test:
        p.add_argument("--test")
    if extra:
        p.add_argument("--extra")


def _add_out_flags(p):
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--run-name", dest="run_name")


def build_arg_parser():
    top = _ArgumentParser(prog="morphparse",
                          description="Morphology-aware dependency parsing toolkit")
    top.add_argument("--quiet", action="store_true", help="suppress progress logging")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true")
    sub = top.add_subparsers(dest="command", required=True, metavar="COMMAND",
                             parser_class=_ArgumentParser)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("derive-tags", help="treebank -> tag TSV")
    p.add_argument("--scheme", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap-depth", dest="cap_depth", type=int)
    p.add_argument("--cap-children", dest="cap_children", type=int)
    p.set_defaults(func=cmd_derive_tags)

    p = add_parser("gen-synthetic", help="generate a case-marked toy treebank")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--grammar", help="grammar JSON (default: bundled)")
    p.set_defaults(func=cmd_gen_synthetic)

    p = add_parser("train-tagger", help="train one scheme tagger on a treebank")
    p.add_argument("--scheme", required=True)
    _add_data_flags(p, test=False)
    _add_train_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=cmd_train_tagger)

    p = add_parser("train-parser", help="train the base parser")
    _add_data_flags(p)
    _add_train_flags(p)
    _add_out_flags(p)
    p.add_argument("--word-vectors", dest="word_vectors")
    p.add_argument("--punct", choices=("include", "exclude"))
    p.add_argument("--multi-root", dest="multi_root", action="store_true",
                   help="drop the single-root constraint at decode time")
    p.set_defaults(func=cmd_train_parser)

    p = add_parser("parse", help="annotate a CoNLL-U file with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tags", help="tag TSV for models with a tag input channel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multi-root", dest="multi_root", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--punct", choices=("include", "exclude"), default="include")
    p.add_argument("--breakdown", action="store_true", help="per-relation table")
    p.add_argument("--name", default="run")
    p.add_argument("--out", help="write scores as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = add_parser("pipeline", help="run one experiment variant end to end")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    _add_data_flags(p, extra=True)
    _add_train_flags(p, taggers=True)
    _add_out_flags(p)
    p.add_argument("--schemes", help="comma-separated scheme override")
    p.add_argument("--freeze-pretrained", dest="freeze_pretrained", action="store_true")
    p.add_argument("--force-primary", dest="force_primary", action="store_true")
    p.add_argument("--warm-start", dest="warm_start", action="store_true")
    p.add_argument("--gate", choices=("softmax", "sigmoid"))
    p.add_argument("--punct", choices=("include", "exclude"))
    p.add_argument("--multi-root", dest="multi_root", action="store_true")
    p.add_argument("--mtl-lambda", dest="mtl_lambda", type=float)
    p.add_argument("--uf-epochs", dest="uf_epochs", type=int)
    p.add_argument("--hier-checkpoint", dest="hier_checkpoint")
    p.add_argument("--test-tags", dest="test_tags")
    p.add_argument("--word-vectors", dest="word_vectors")
    p.set_defaults(func=cmd_pipeline)

    p = add_parser("size-ablation", help="rerun a variant at training prefixes")
    p.add_argument("--variant", default="base", choices=VARIANTS)
    p.add_argument("--sizes", required=True, help="comma-separated sentence counts")
    _add_data_flags(p, extra=True)
    _add_train_flags(p, taggers=True)
    _add_out_flags(p)
    p.set_defaults(func=cmd_size_ablation)

    p = add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--model", choices=sorted(_GRAD_TARGETS), default="all")
    p.add_argument("--profile", choices=("desk", "paper"),
                   help="accepted for symmetry; checks always run at toy sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=5)
    p.set_defaults(func=cmd_grad_check)

    p = add_parser("inspect-checkpoint", help="list parameters in a checkpoint")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_inspect_checkpoint)

    return top


def main(argv=None):
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level=logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except (MorphparseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
