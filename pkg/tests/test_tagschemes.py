"""Sequence-label derivation from trees and morphology, plus vocabularies."""

import numpy as np
import pytest

from morphparse import (
    ContractError,
    ParseError,
    TagScheme,
    TreeError,
    Treebank,
    Vocab,
    build_tag_vocab,
    derive_tags,
    derive_treebank_tags,
    parse_tagged_tsv,
    tree_depths,
    write_tagged_tsv,
)

from helpers import depth_oracle, make_sentence, random_valid_heads


def labels(sentence, scheme, **caps):
    return list(derive_tags(sentence, scheme, **caps).labels)


EXPECTED_R = {
    TagScheme.MT: ["Case=Nom|Number=Sg", "Case=Acc|Number=Sg",
                   "Number=Sg|Person=3"],
    TagScheme.CT: ["Nom", "Acc", "VERB"],
    TagScheme.NT: ["Sg", "Sg", "Sg"],
    TagScheme.PT: ["NOUN", "NOUN", "3"],
    TagScheme.GT: ["NOUN", "NOUN", "VERB"],
    TagScheme.LT: ["nsubj", "obj", "root"],
    TagScheme.RD: ["1", "1", "0"],
    TagScheme.NC: ["0", "0", "2"],
    TagScheme.RP: ["R_VERB", "R_VERB", "ROOT"],
    TagScheme.HW: ["khādati", "khādati", "<ROOT>"],
    TagScheme.PHW: ["VERB", "VERB", "<ROOT>"],
    TagScheme.LM: ["phalam", "khādati", "<EOS>"],
    TagScheme.CP: ["NOUN", "NOUN", "VERB"],
}


@pytest.mark.parametrize("scheme", list(TagScheme))
def test_sentence_r_examples(sentence_r, scheme):
    seq = derive_tags(sentence_r, scheme)
    assert seq.scheme is scheme
    assert list(seq.labels) == EXPECTED_R[scheme]


def test_tree_depths():
    assert tree_depths([3, 3, 0]) == [1, 1, 0]
    assert tree_depths([0]) == [0]
    # chain 1<-2<-3
    assert tree_depths([0, 1, 2]) == [0, 1, 2]
    assert tree_depths([0, 1, 2], cap=1) == [0, 1, 1]


def test_depth_cap_buckets_include_cap():
    n = 10
    heads = [0] + list(range(1, n))  # chain, depths 0..9
    sent = make_sentence(heads)
    tags = labels(sent, TagScheme.RD)
    assert tags[:7] == ["0", "1", "2", "3", "4", "5", "6"]
    assert tags[7:] == ["≥7", "≥7", "≥7"]
    shallow = labels(sent, TagScheme.RD, cap_depth=3)
    assert shallow == ["0", "1", "2"] + ["≥3"] * 7


def test_children_cap_buckets():
    n = 9
    heads = [0] + [1] * (n - 1)  # token 1 has 8 children
    sent = make_sentence(heads)
    tags = labels(sent, TagScheme.NC)
    assert tags[0] == "≥7"
    assert tags[1:] == ["0"] * (n - 1)
    assert labels(sent, TagScheme.NC, cap_children=9)[0] == "8"


def test_left_right_position():
    # 1 -> head 2 (head is to the right), 3 -> head 2 (head is to the left)
    sent = make_sentence([2, 0, 2], upos=["NOUN", "VERB", "NOUN"])
    assert labels(sent, TagScheme.RP) == ["R_VERB", "ROOT", "L_VERB"]


def test_derive_treebank_tags():
    a = make_sentence([3, 3, 0], deprels=["nsubj", "obj", "root"])
    tb = Treebank((a, a), name="t")
    seqs = derive_treebank_tags(tb, TagScheme.LT)
    assert [list(s.labels) for s in seqs] == [["nsubj", "obj", "root"]] * 2
    assert derive_treebank_tags(Treebank((), name="e"), TagScheme.LT) == []


def test_derive_treebank_tags_cyclic_names_sentence():
    bad = make_sentence([2, 1, 0])
    tb = Treebank((bad,), name="t")
    with pytest.raises(TreeError) as err:
        derive_treebank_tags(tb, TagScheme.RD)
    assert "sentence 0" in str(err.value)


def test_morph_schemes_ignore_tree():
    bad = make_sentence([2, 1, 0], featmaps=[{"Case": "Nom"}] * 3)
    assert labels(bad, TagScheme.CT) == ["Nom", "Nom", "Nom"]
    assert labels(bad, TagScheme.MT) == ["Case=Nom"] * 3


def test_tree_schemes_reject_cycles():
    bad = make_sentence([2, 1, 0])
    for scheme in (TagScheme.RD, TagScheme.NC, TagScheme.RP,
                   TagScheme.HW, TagScheme.PHW, TagScheme.LT):
        with pytest.raises(TreeError):
            derive_tags(bad, scheme)


# --- properties over random trees -------------------------------------------


def test_tree_scheme_properties_random():
    rng = np.random.default_rng(77)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        heads = random_valid_heads(rng, n)
        deprels = [f"rel{int(rng.integers(0, 4))}" for _ in range(n)]
        sent = make_sentence(heads, deprels=deprels)

        for scheme in TagScheme:
            assert len(derive_tags(sent, scheme)) == n

        assert labels(sent, TagScheme.LT) == deprels

        depths = depth_oracle(heads)
        rd = labels(sent, TagScheme.RD, cap_depth=100)
        assert rd == [str(d) for d in depths]

        nc = labels(sent, TagScheme.NC, cap_children=100)
        assert sum(int(t) for t in nc) == n - 1


def test_feature_fallback_iff_absent():
    sent = make_sentence(
        [0, 1], upos=["VERB", "NOUN"],
        featmaps=[{"Person": "3"}, {"Case": "Acc", "Number": "Pl"}])
    assert labels(sent, TagScheme.CT) == ["VERB", "Acc"]
    assert labels(sent, TagScheme.NT) == ["VERB", "Pl"]
    assert labels(sent, TagScheme.PT) == ["3", "NOUN"]
    assert labels(sent, TagScheme.GT) == ["VERB", "NOUN"]


# --- vocabulary ---------------------------------------------------------------


def test_vocab_min_freq():
    items = ["a", "a", "a", "b"]
    v = Vocab.build(items, min_freq=2)
    assert v.symbols == ["<PAD>", "<UNK>", "a"]
    assert v.lookup("a") == 2
    assert v.lookup("b") == 1  # below threshold -> UNK
    assert len(v) == 3

    v1 = Vocab.build(items, min_freq=1)
    assert v1.lookup("b") > 1
    assert len(v1) == 4


def test_vocab_order_frequency_then_lexicographic():
    v = Vocab.build(["b", "c", "c", "a", "b", "b"])
    # b three times, c twice, a once
    assert v.symbols[2:] == ["b", "c", "a"]
    tied = Vocab.build(["y", "x"])
    assert tied.symbols[2:] == ["x", "y"]


def test_vocab_round_trip_and_determinism():
    v = Vocab.build(["x", "y", "z", "x"])
    assert Vocab.build(["x", "y", "z", "x"]) == v
    assert Vocab.from_json(v.to_json()) == v
    assert v.symbol(v.lookup("y")) == "y"


def test_build_tag_vocab_scheme_defaults():
    a = make_sentence([3, 3, 0], deprels=["nsubj", "obj", "root"],
                      forms=["ra", "pha", "kha"])
    tb = Treebank((a,), name="t")
    v_lt = build_tag_vocab(derive_treebank_tags(tb, TagScheme.LT))
    assert v_lt.lookup("nsubj") > 1

    # LM defaults to min_freq=2: singleton next-words collapse to UNK
    lm_seqs = derive_treebank_tags(tb, TagScheme.LM)
    v_lm = build_tag_vocab(lm_seqs)
    assert v_lm.lookup("pha") == 1
    v_lm1 = build_tag_vocab(lm_seqs, min_freq=1)
    assert v_lm1.lookup("pha") > 1


def test_build_tag_vocab_mixed_schemes_rejected():
    a = make_sentence([0], deprels=["root"])
    seqs = [derive_tags(a, TagScheme.LT), derive_tags(a, TagScheme.CT)]
    with pytest.raises(ContractError):
        build_tag_vocab(seqs)


def test_write_tagged_tsv_round_trip():
    a = make_sentence([2, 0], deprels=["det", "root"], forms=["a", "b"])
    b = make_sentence([0], deprels=["root"], forms=["c"])
    forms = [["a", "b"], ["c"]]
    seqs = [derive_tags(a, TagScheme.LT), derive_tags(b, TagScheme.LT)]
    text = write_tagged_tsv(forms, seqs)
    got_forms, got_seqs = parse_tagged_tsv(text, TagScheme.LT)
    assert got_forms == forms
    assert got_seqs == seqs


def test_write_tagged_tsv_mismatch():
    a = make_sentence([2, 0], forms=["a", "b"])
    seq = derive_tags(a, TagScheme.LT)
    with pytest.raises(ContractError):
        write_tagged_tsv([["a"]], [seq])
    with pytest.raises(ContractError):
        write_tagged_tsv([["a", "b"]], [seq, seq])


def test_parse_tagged_tsv_bad_columns():
    with pytest.raises(ParseError) as err:
        parse_tagged_tsv("a\tX\tQ\n\n", TagScheme.CT)
    assert "line 1" in str(err.value)
