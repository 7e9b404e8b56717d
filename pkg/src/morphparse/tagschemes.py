"""Auxiliary sequence-tagging datasets derived from treebanks.

Thirteen schemes over one sentence: morphological tag (MT), case-or-POS
(CT), dependency relation (LT), tree depth (RD), child count (NC), head
direction+POS (RP), next word (LM), plus the ablation schemes CP, HW,
PHW, NT, PT, GT. Tree-derived schemes require a valid tree.
"""

from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .conllu import validate_tree
from .errors import ContractError, TreeError

EOS = "<EOS>"
ROOT_LABEL = "<ROOT>"

DEFAULT_CAP_DEPTH = 7
DEFAULT_CAP_CHILDREN = 7


class TagScheme(str, Enum):
    MT = "MT"   # full morphological feature string
    CT = "CT"   # case value, POS fallback
    LT = "LT"   # dependency relation
    RD = "RD"   # depth below root
    NC = "NC"   # number of dependents
    RP = "RP"   # head direction + head POS
    LM = "LM"   # next word form
    CP = "CP"   # coarse POS
    HW = "HW"   # head word form
    PHW = "PHW" # head word POS
    NT = "NT"   # number value, POS fallback
    PT = "PT"   # person value, POS fallback
    GT = "GT"   # gender value, POS fallback


TREE_SCHEMES = frozenset({TagScheme.LT, TagScheme.RD, TagScheme.NC,
                          TagScheme.RP, TagScheme.HW, TagScheme.PHW})

# feature consulted by the feature-or-POS schemes
_FEATURE_OF = {TagScheme.CT: "Case", TagScheme.NT: "Number",
               TagScheme.PT: "Person", TagScheme.GT: "Gender"}

# high-cardinality open-vocabulary schemes get a stricter vocab cutoff
DEFAULT_MIN_FREQ = {TagScheme.LM: 2, TagScheme.HW: 2}


@dataclass(frozen=True)
class TagSequence:
    scheme: TagScheme
    labels: tuple

    def __len__(self):
        return len(self.labels)


def tree_depths(heads, cap=None):
    """Depth below the root word for each token (root word itself = 0)."""
    n = len(heads)
    depths = [None] * (n + 1)
    depths[0] = -1  # synthetic root sits above the root word
    for i in range(1, n + 1):
        chain = []
        node = i
        while depths[node] is None:
            chain.append(node)
            node = heads[node - 1]
        base = depths[node]
        for off, v in enumerate(reversed(chain), start=1):
            depths[v] = base + off
    out = depths[1:]
    if cap is not None:
        out = [min(d, cap) for d in out]
    return out


def derive_tags(sentence, scheme, cap_depth=DEFAULT_CAP_DEPTH,
                cap_children=DEFAULT_CAP_CHILDREN):
    """Per-token labels for ``scheme``; |labels| == |tokens|."""
    scheme = TagScheme(scheme)
    toks = sentence.tokens
    if scheme in TREE_SCHEMES:
        result = validate_tree(sentence)
        if not result:
            raise TreeError(f"{scheme.value} needs a valid tree: {result.describe()}")

    if scheme is TagScheme.MT:
        labels = [t.feats_string() for t in toks]
    elif scheme in _FEATURE_OF:
        feat = _FEATURE_OF[scheme]
        labels = [t.feat(feat) or t.upos for t in toks]
    elif scheme is TagScheme.LT:
        labels = [t.deprel for t in toks]
    elif scheme is TagScheme.CP:
        labels = [t.upos for t in toks]
    elif scheme is TagScheme.LM:
        labels = [toks[i + 1].form for i in range(len(toks) - 1)] + [EOS]
    elif scheme is TagScheme.RD:
        depths = tree_depths(sentence.heads)
        labels = [str(d) if d < cap_depth else f"≥{cap_depth}" for d in depths]
    elif scheme is TagScheme.NC:
        counts = Counter(t.head for t in toks)
        labels = [counts.get(t.id, 0) for t in toks]
        labels = [str(c) if c < cap_children else f"≥{cap_children}" for c in labels]
    elif scheme is TagScheme.RP:
        labels = []
        for t in toks:
            if t.head == 0:
                labels.append("ROOT")
            else:
                direction = "L" if t.head < t.id else "R"
                labels.append(f"{direction}_{toks[t.head - 1].upos}")
    elif scheme is TagScheme.HW:
        labels = [ROOT_LABEL if t.head == 0 else toks[t.head - 1].form for t in toks]
    elif scheme is TagScheme.PHW:
        labels = [ROOT_LABEL if t.head == 0 else toks[t.head - 1].upos for t in toks]
    else:  # pragma: no cover - the enum is closed
        raise ContractError(f"unhandled scheme {scheme}")
    return TagSequence(scheme, tuple(labels))


def derive_treebank_tags(treebank, scheme, **caps):
    """Map ``derive_tags`` over a treebank, naming the failing sentence."""
    out = []
    for i, sent in enumerate(treebank):
        try:
            out.append(derive_tags(sent, scheme, **caps))
        except TreeError as e:
            raise TreeError(f"sentence {i} ({sent.sent_id or 'no id'}): {e}") from None
    return out


# ---------------------------------------------------------------------------
# vocabularies

PAD = "<PAD>"
UNK = "<UNK>"


class Vocab:
    """Symbol/index bijection with reserved PAD=0 and UNK=1 slots."""

    def __init__(self, symbols):
        self.symbols = [PAD, UNK] + list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ContractError("duplicate symbols in vocabulary")

    @classmethod
    def build(cls, items, min_freq=1):
        """Frequency-then-lexicographic ordering; below-cutoff items drop to UNK."""
        counts = Counter(items)
        kept = sorted((s for s, c in counts.items() if c >= min_freq),
                      key=lambda s: (-counts[s], s))
        return cls(kept)

    def lookup(self, symbol):
        return self.index.get(symbol, 1)

    def symbol(self, idx):
        return self.symbols[idx]

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.symbols == other.symbols

    def to_json(self):
        return {"symbols": self.symbols[2:]}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["symbols"])


def build_tag_vocab(sequences, min_freq=None):
    """Label vocabulary over TagSequences sharing one scheme."""
    schemes = {seq.scheme for seq in sequences}
    if len(schemes) > 1:
        raise ContractError(f"mixed schemes in one vocab: {sorted(s.value for s in schemes)}")
    if min_freq is None:
        scheme = next(iter(schemes)) if schemes else None
        min_freq = DEFAULT_MIN_FREQ.get(scheme, 1)
    labels = [lab for seq in sequences for lab in seq.labels]
    return Vocab.build(labels, min_freq=min_freq)


# ---------------------------------------------------------------------------
# two-column TSV serialization (form <TAB> label, blank line between sentences)


def write_tagged_tsv(sentences_forms, sequences):
    if len(sentences_forms) != len(sequences):
        raise ContractError("forms/labels sentence count mismatch")
    blocks = []
    for forms, seq in zip(sentences_forms, sequences):
        if len(forms) != len(seq.labels):
            raise ContractError("forms/labels length mismatch")
        blocks.append("\n".join(f"{f}\t{l}" for f, l in zip(forms, seq.labels)))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def parse_tagged_tsv(text, scheme):
    """Inverse of write_tagged_tsv; returns (forms per sentence, TagSequences)."""
    from .errors import ParseError
    scheme = TagScheme(scheme)
    all_forms, all_seqs = [], []
    forms, labels = [], []
    for line_no, line in enumerate(text.split("\n"), start=1):
        if line == "":
            if forms:
                all_forms.append(forms)
                all_seqs.append(TagSequence(scheme, tuple(labels)))
                forms, labels = [], []
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise ParseError(f"expected 2 columns, got {len(cols)}, line {line_no}")
        forms.append(cols[0])
        labels.append(cols[1])
    if forms:
        all_forms.append(forms)
        all_seqs.append(TagSequence(scheme, tuple(labels)))
    return all_forms, all_seqs
