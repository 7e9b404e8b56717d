"""Morphology-aware dependency parsing toolkit.

A small numpy substrate (reverse-mode autodiff, BiLSTM/CNN encoders,
biaffine arc scoring, MST decoding) plus tagging-scheme derivation and
seeded experiment pipelines for comparing ways of injecting morphology
into a graph-based parser.
"""

from .errors import CheckpointError, ConfigError, ContractError, MorphparseError, \
    NumericError, ParseError, ShapeError, TreeError
from .conllu import Sentence, Token, Treebank, ValidationResult, default_grammar, \
    gen_synthetic, load_grammar, make_feats, parse_conllu, read_conllu, save_conllu, \
    strip_annotation, validate_heads, validate_tree, write_conllu
from .tagschemes import TagScheme, TagSequence, Vocab, build_tag_vocab, derive_tags, \
    derive_treebank_tags, parse_tagged_tsv, tree_depths, write_tagged_tsv
from .autodiff import ParameterStore, SeedStreams, Tensor, adam_step, backward, \
    grad_check, load_checkpoint, no_grad, save_checkpoint
from .nn import Adapter, EncoderConfig, EncoderStack, GateCombiner, adapter_forward, \
    biaffine, char_cnn, gate_combine, gate_weights, load_word_vectors, lstm_scan
from .parser import ArcScores, BiaffineParserModel, ParseTree, decode_greedy, \
    decode_mst, load_model, parser_loss, predict, save_model, score_arcs, score_labels
from .tagger import HierMorphTagger, TaggerModel, extract_layers, load_tagger, \
    predict_tags, save_tagger, tag_metrics, tagger_forward, train_hier_morph_tagger, \
    train_tagger
from .evaluation import AttachmentScore, relation_breakdown, report, uas_las
from .pipelines import PipelineResult, PipelineSpec, TrainConfig, VARIANTS, \
    base_star_config, run_base, run_dcst, run_lcm, run_mi, run_mtl, run_pipeline, \
    run_size_ablation, run_transeq
from .checks import ALL_COMPONENTS, GRAD_TOL, gradient_report

__version__ = "0.1.0"

__all__ = [n for n in dir() if not n.startswith("_")]
