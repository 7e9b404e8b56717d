"""CoNLL-U treebank reading, validation, writing, and synthetic data.

Tokens keep the full 10-column record so that parse -> write round-trips
are lossless. Multiword-token ranges and empty nodes are carried along as
opaque lines and never scored.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ParseError

_COLUMNS = 10


@dataclass(frozen=True)
class Token:
    """One syntactic word. ``head`` 0 means the synthetic root."""

    id: int
    form: str
    lemma: str = "_"
    upos: str = "_"
    feats: tuple = ()  # ((name, value), ...) sorted by name
    head: int = 0
    deprel: str = "_"
    xpos: str = "_"
    deps: str = "_"
    misc: str = "_"

    def feats_dict(self):
        return dict(self.feats)

    def feat(self, name):
        for k, v in self.feats:
            if k == name:
                return v
        return None

    def feats_string(self):
        if not self.feats:
            return "_"
        return "|".join(f"{k}={v}" for k, v in self.feats)


def make_feats(mapping):
    """Canonical feats tuple: unique keys, sorted by name."""
    items = sorted(mapping.items())
    if len({k for k, _ in items}) != len(items):
        raise ParseError("duplicate feature names")
    return tuple(items)


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    comments: tuple = ()
    # opaque non-basic lines (multiword ranges, empty nodes) with the
    # index of the token line they precede, for lossless re-emission
    extras: tuple = ()

    def __len__(self):
        return len(self.tokens)

    @property
    def sent_id(self):
        for c in self.comments:
            if c.startswith("# sent_id"):
                return c.split("=", 1)[1].strip()
        return None

    @property
    def heads(self):
        return [t.head for t in self.tokens]

    @property
    def forms(self):
        return [t.form for t in self.tokens]

    @property
    def deprels(self):
        return [t.deprel for t in self.tokens]


@dataclass(frozen=True)
class Treebank:
    sentences: tuple
    name: str = ""

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, index):
        return self.sentences[index]


def parse_conllu(text, name=""):
    """Parse CoNLL-U text into a Treebank, preserving comments and order."""
    sentences = []
    tokens = []
    comments = []
    extras = []
    pending_head_checks = []  # (line_no, head) verified once n is known

    def flush(line_no):
        nonlocal tokens, comments, extras, pending_head_checks
        if not tokens and not comments and not extras:
            return
        n = len(tokens)
        for ln, head in pending_head_checks:
            if head > n:
                raise ParseError(f"head out of range, line {ln}")
        sentences.append(Sentence(tuple(tokens), tuple(comments), tuple(extras)))
        tokens, comments, extras, pending_head_checks = [], [], [], []

    for line_no, line in enumerate(text.split("\n"), start=1):
        if line == "":
            flush(line_no)
            continue
        if line.startswith("#"):
            comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != _COLUMNS:
            raise ParseError(f"expected {_COLUMNS} columns, got {len(cols)}, line {line_no}")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            extras.append((len(tokens), line))
            continue
        try:
            idx = int(tok_id)
        except ValueError:
            raise ParseError(f"non-integer token id {tok_id!r}, line {line_no}")
        if idx != len(tokens) + 1:
            raise ParseError(f"token id {idx} out of sequence, line {line_no}")
        try:
            head = int(cols[6])
        except ValueError:
            raise ParseError(f"non-integer head {cols[6]!r}, line {line_no}")
        if head < 0:
            raise ParseError(f"head out of range, line {line_no}")
        if head == idx:
            raise ParseError(f"token {idx} is its own head, line {line_no}")
        pending_head_checks.append((line_no, head))
        feats = _parse_feats(cols[5], line_no)
        tokens.append(Token(id=idx, form=cols[1], lemma=cols[2], upos=cols[3],
                            xpos=cols[4], feats=feats, head=head, deprel=cols[7],
                            deps=cols[8], misc=cols[9]))
    flush(line_no if text else 0)
    return Treebank(tuple(sentences), name=name)


def _parse_feats(raw, line_no):
    if raw == "_":
        return ()
    pairs = {}
    for item in raw.split("|"):
        if "=" not in item:
            raise ParseError(f"malformed feature {item!r}, line {line_no}")
        k, v = item.split("=", 1)
        if k in pairs:
            raise ParseError(f"duplicate feature {k!r}, line {line_no}")
        pairs[k] = v
    return make_feats(pairs)


def read_conllu(path):
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f.read(), name=str(path))


def write_conllu(treebank):
    """Canonical serialization: one blank line between sentences, trailing newline."""
    blocks = []
    for sent in treebank:
        lines = list(sent.comments)
        extras = {pos: [ln for p, ln in sent.extras if p == pos]
                  for pos, _ in sent.extras}
        for i, tok in enumerate(sent.tokens):
            lines.extend(extras.get(i, ()))
            lines.append("\t".join([str(tok.id), tok.form, tok.lemma, tok.upos,
                                    tok.xpos, tok.feats_string(), str(tok.head),
                                    tok.deprel, tok.deps, tok.misc]))
        lines.extend(extras.get(len(sent.tokens), ()))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def save_conllu(treebank, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(write_conllu(treebank))


# ---------------------------------------------------------------------------
# tree validation


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    kind: str = ""  # "" | "self-loop" | "multi-root" | "cycle"
    nodes: tuple = ()

    def __bool__(self):
        return self.ok

    def describe(self):
        if self.ok:
            return "OK"
        if self.kind == "cycle":
            return "cycle {" + ", ".join(map(str, self.nodes)) + "}"
        return self.kind


def validate_heads(heads):
    """Check that 1-based ``heads`` (0 = root) form a single rooted tree."""
    n = len(heads)
    for i, h in enumerate(heads, start=1):
        if h == i:
            return ValidationResult(False, "self-loop", (i,))
        if not 0 <= h <= n:
            return ValidationResult(False, "head-out-of-range", (i,))
    roots = [i for i, h in enumerate(heads, start=1) if h == 0]
    if len(roots) > 1:
        return ValidationResult(False, "multi-root", tuple(roots))
    # walk up from each node; revisiting a node on the current path is a cycle
    state = [0] * (n + 1)  # 0 unvisited, 1 on path, 2 done
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            cut = path.index(node)
            cycle = tuple(sorted(path[cut:]))
            return ValidationResult(False, "cycle", cycle)
        for v in path:
            state[v] = 2
    if not roots:
        # unreachable: zero roots with no self-loop implies a cycle above
        return ValidationResult(False, "multi-root", ())
    return ValidationResult(True)


def validate_tree(sentence):
    return validate_heads(sentence.heads)


# ---------------------------------------------------------------------------
# synthetic case-marked treebanks

_DEFAULT_GRAMMAR = None


def default_grammar():
    """Grammar config bundled with the package (cached)."""
    global _DEFAULT_GRAMMAR
    if _DEFAULT_GRAMMAR is None:
        from importlib.resources import files
        raw = files("morphparse.data").joinpath("grammar.json").read_text("utf-8")
        _DEFAULT_GRAMMAR = json.loads(raw)
    return _DEFAULT_GRAMMAR


def load_grammar(path):
    with open(path, encoding="utf-8") as f:
        grammar = json.load(f)
    _check_grammar(grammar)
    return grammar


def _check_grammar(grammar):
    for key in ("cases", "declensions", "frames", "syllables", "verb_suffix"):
        if key not in grammar:
            raise ConfigError(f"grammar missing {key!r}")
    if not grammar["declensions"] or not grammar["frames"]:
        raise ConfigError("grammar lexicon is empty")
    for decl in grammar["declensions"]:
        missing = set(grammar["cases"]) - set(decl["suffixes"])
        if missing:
            raise ConfigError(f"declension lacks suffixes for {sorted(missing)}")


def _make_stem(rng, syllables, n_syllables):
    parts = []
    for i in range(n_syllables):
        parts.append(syllables["onsets"][rng.integers(len(syllables["onsets"]))])
        parts.append(syllables["nuclei"][rng.integers(len(syllables["nuclei"]))])
        if i == n_syllables - 1 and rng.random() < syllables.get("coda_prob", 0.5):
            parts.append(syllables["codas"][rng.integers(len(syllables["codas"]))])
    return "".join(parts)


def gen_synthetic(seed, n_sentences, grammar=None, name="synthetic"):
    """Deterministic case-marked treebank where morphology decides syntax.

    Each sentence has one verb (the root) and case-suffixed nominals whose
    case picks both the relation and the head: core cases attach to the
    verb, the adnominal case attaches to the nearest plain nominal to the
    right (leftward fallback). Constituent order is shuffled per sentence,
    so linear position carries no role information. Stems are synthesized
    from syllables, so held-out data is mostly unseen word forms.
    """
    if grammar is None:
        grammar = default_grammar()
    _check_grammar(grammar)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5E17])))
    cases = grammar["cases"]
    declensions = grammar["declensions"]
    syllables = grammar["syllables"]
    frames = grammar["frames"]
    genitive_case = grammar.get("adnominal_case", "Gen")
    gen_prob = grammar.get("adnominal_prob", 0.35)
    verb_number = grammar.get("verb_feats", {"Number": "Sg", "Person": "3"})

    sentences = []
    for s_idx in range(int(n_sentences)):
        frame = frames[rng.integers(len(frames))]
        # draft entries: (kind, case, stem, declension index)
        entries = []
        verb_stem = _make_stem(rng, syllables, int(rng.integers(1, 3)))
        entries.append(("verb", None, verb_stem, None))
        for case in frame:
            decl = int(rng.integers(len(declensions)))
            stem = _make_stem(rng, syllables, int(rng.integers(1, 3)))
            entries.append(("noun", case, stem, decl))
            if rng.random() < gen_prob:
                gdecl = int(rng.integers(len(declensions)))
                gstem = _make_stem(rng, syllables, int(rng.integers(1, 3)))
                entries.append(("noun", genitive_case, gstem, gdecl))
        order = rng.permutation(len(entries))
        entries = [entries[i] for i in order]

        tokens = []
        verb_pos = next(i for i, e in enumerate(entries) if e[0] == "verb")
        plain_positions = [i for i, e in enumerate(entries)
                           if e[0] == "noun" and e[1] != genitive_case]
        for pos, (kind, case, stem, decl) in enumerate(entries):
            idx = pos + 1
            if kind == "verb":
                form = stem + grammar["verb_suffix"]
                feats = make_feats(verb_number)
                tokens.append(Token(id=idx, form=form, lemma=stem, upos="VERB",
                                    feats=feats, head=0, deprel="root"))
                continue
            decl_spec = declensions[decl]
            form = stem + decl_spec["suffixes"][case]
            feats = make_feats({"Case": case, "Gender": decl_spec["gender"],
                                "Number": "Sg"})
            rule = cases[case]
            if rule["attach"] == "verb":
                head = verb_pos + 1
            else:  # nearest plain nominal to the right, else to the left
                right = [p for p in plain_positions if p > pos]
                left = [p for p in plain_positions if p < pos]
                target = right[0] if right else left[-1]
                head = target + 1
            tokens.append(Token(id=idx, form=form, lemma=stem, upos="NOUN",
                                feats=feats, head=head, deprel=rule["deprel"]))
        comments = (f"# sent_id = {name}-{seed}-{s_idx}",)
        sentences.append(Sentence(tuple(tokens), comments))
    return Treebank(tuple(sentences), name=name)


def strip_annotation(treebank):
    """Drop heads/deprels (and keep everything else): raw text for self-training."""
    sents = []
    for sent in treebank:
        toks = tuple(replace(t, head=0, deprel="_") for t in sent.tokens)
        sents.append(Sentence(toks, sent.comments, sent.extras))
    return Treebank(tuple(sents), name=treebank.name)
