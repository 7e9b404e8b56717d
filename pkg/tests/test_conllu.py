"""Reading, validating, writing, and generating annotated sentences."""

import dataclasses

import numpy as np
import pytest

from morphparse import (
    ConfigError,
    ParseError,
    default_grammar,
    gen_synthetic,
    make_feats,
    parse_conllu,
    strip_annotation,
    validate_heads,
    validate_tree,
    write_conllu,
)

from helpers import R_TEXT, is_single_root_tree, make_sentence, make_treebank


def test_parse_single_token():
    tb = parse_conllu("1\thi\t_\t_\t_\t_\t0\troot\t_\t_\n")
    assert len(tb.sentences) == 1
    (sent,) = tb.sentences
    assert len(sent.tokens) == 1
    tok = sent.tokens[0]
    assert tok.form == "hi"
    assert tok.head == 0
    assert tok.deprel == "root"


def test_parse_sentence_r(sentence_r):
    assert sentence_r.sent_id == "r-1"
    assert list(sentence_r.forms) == ["rāmaḥ", "phalam", "khādati"]
    assert list(sentence_r.heads) == [3, 3, 0]
    assert list(sentence_r.deprels) == ["nsubj", "obj", "root"]
    assert sentence_r.tokens[0].feats_dict() == {"Case": "Nom", "Number": "Sg"}
    assert sentence_r.tokens[2].feat("Case") is None
    assert sentence_r.tokens[2].feat("Person") == "3"


def test_round_trip_exact():
    tb = parse_conllu(R_TEXT)
    text = write_conllu(tb)
    assert parse_conllu(text) == tb
    assert write_conllu(parse_conllu(text)) == text


def test_head_out_of_range_names_line():
    bad = R_TEXT.replace("3\tnsubj", "5\tnsubj")
    with pytest.raises(ParseError) as err:
        parse_conllu(bad)
    msg = str(err.value)
    assert "head" in msg
    assert "line 2" in msg


def test_non_integer_fields_rejected():
    with pytest.raises(ParseError):
        parse_conllu("x\thi\t_\t_\t_\t_\t0\troot\t_\t_\n")
    with pytest.raises(ParseError):
        parse_conllu("1\thi\t_\t_\t_\t_\ty\troot\t_\t_\n")


def test_wrong_column_count_rejected():
    with pytest.raises(ParseError):
        parse_conllu("1\thi\t_\n")


def test_duplicate_feature_rejected():
    with pytest.raises(ParseError):
        make_feats({"Case": "Nom"})  # fine
        parse_conllu(
            "1\thi\t_\t_\t_\tCase=Nom|Case=Acc\t0\troot\t_\t_\n")


def test_comments_preserved():
    text = "# sent_id = a\n# text = hi there\n" \
           "1\thi\t_\t_\t_\t_\t0\troot\t_\t_\n"
    tb = parse_conllu(text)
    sent = tb.sentences[0]
    assert "# text = hi there" in sent.comments
    assert sent.sent_id == "a"
    assert write_conllu(tb) == text


def test_multiword_line_kept_opaque():
    text = ("1-2\tdell'\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "1\tdi\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "2\tl'\t_\t_\t_\t_\t1\tdet\t_\t_\n")
    tb = parse_conllu(text)
    sent = tb.sentences[0]
    assert len(sent.tokens) == 2
    assert write_conllu(tb) == text


# --- validation --------------------------------------------------------------


def test_validate_good_tree():
    res = validate_heads([3, 3, 0])
    assert res
    assert res.kind == ""


def test_validate_cycle():
    res = validate_heads([2, 1, 0])
    assert not res
    assert res.kind == "cycle"
    assert set(res.nodes) == {1, 2}
    assert "cycle" in res.describe()


def test_validate_multi_root():
    res = validate_heads([0, 0, 1])
    assert not res
    assert res.kind == "multi-root"
    assert set(res.nodes) == {1, 2}


def test_validate_no_root():
    res = validate_heads([2, 3, 1])
    assert not res


def test_validate_self_loop():
    res = validate_heads([1, 0])
    assert not res
    assert res.kind == "self-loop"
    assert res.nodes == (1,)


def test_validate_head_out_of_range():
    res = validate_heads([4, 0, 1])
    assert not res
    assert res.kind == "head-out-of-range"


def test_validate_tree_on_sentence(sentence_r):
    assert validate_tree(sentence_r)
    bad = make_sentence([2, 1, 0])
    assert not validate_tree(bad)


def test_validate_agrees_with_reachability_oracle():
    rng = np.random.default_rng(20240811)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        heads = [int(h) for h in rng.integers(0, n + 1, size=n)]
        assert bool(validate_heads(heads)) == is_single_root_tree(heads), heads


# --- writing -----------------------------------------------------------------


def test_write_empty_feats_underscore():
    sent = make_sentence([0], deprels=["root"])
    text = write_conllu([sent])
    cols = text.splitlines()[0].split("\t")
    assert cols[5] == "_"


def test_write_feats_sorted():
    sent = make_sentence([0], deprels=["root"],
                         featmaps=[{"Number": "Sg", "Case": "Nom"}])
    line = write_conllu([sent]).splitlines()[0]
    assert "Case=Nom|Number=Sg" in line


def test_write_two_sentences_blank_line_and_trailing_newline():
    a = make_sentence([0], deprels=["root"])
    b = make_sentence([0], deprels=["root"])
    text = write_conllu([a, b])
    assert text.endswith("\n")
    assert not text.endswith("\n\n")
    blocks = text.split("\n\n")
    assert len(blocks) == 2


# --- synthetic generation ----------------------------------------------------


def test_gen_synthetic_deterministic():
    a = gen_synthetic(seed=7, n_sentences=20)
    b = gen_synthetic(seed=7, n_sentences=20)
    assert write_conllu(a) == write_conllu(b)
    c = gen_synthetic(seed=8, n_sentences=20)
    assert write_conllu(a) != write_conllu(c)


def test_gen_synthetic_all_valid():
    tb = gen_synthetic(seed=3, n_sentences=100)
    assert len(tb.sentences) == 100
    for sent in tb.sentences:
        assert validate_tree(sent), sent.sent_id


def test_gen_synthetic_morphology_contract():
    tb = gen_synthetic(seed=11, n_sentences=50)
    saw_acc = False
    for sent in tb.sentences:
        for tok in sent.tokens:
            if tok.upos == "NOUN":
                assert tok.feat("Case") is not None
            if tok.upos == "VERB":
                assert tok.feat("Case") is None
            if tok.feat("Case") == "Acc":
                saw_acc = True
                assert tok.deprel == "obj"
    assert saw_acc


def test_gen_synthetic_distinct_splits_share_grammar():
    train = gen_synthetic(seed=1, n_sentences=30)
    test = gen_synthetic(seed=2, n_sentences=30)
    train_forms = {t.form for s in train.sentences for t in s.tokens}
    test_forms = {t.form for s in test.sentences for t in s.tokens}
    assert train_forms & test_forms


def test_gen_synthetic_empty_lexicon_rejected():
    grammar = dict(default_grammar())
    grammar = {**grammar, "declensions": [], "frames": []}
    with pytest.raises(ConfigError):
        gen_synthetic(seed=1, n_sentences=1, grammar=grammar)


def test_strip_annotation(sentence_r):
    bare = strip_annotation(make_treebank(sentence_r))[0]
    assert [t.head for t in bare.tokens] == [0, 0, 0]
    assert [t.deprel for t in bare.tokens] == ["_", "_", "_"]
    assert [t.form for t in bare.tokens] == list(sentence_r.forms)
    assert bare.tokens[0].feats == sentence_r.tokens[0].feats
    # original untouched
    assert list(sentence_r.heads) == [3, 3, 0]


def test_tokens_immutable(sentence_r):
    with pytest.raises(dataclasses.FrozenInstanceError):
        sentence_r.tokens[0].head = 2
