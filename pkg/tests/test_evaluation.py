"""Attachment scoring and report rendering."""

import json

import pytest

from morphparse import (
    AttachmentScore,
    ConfigError,
    ContractError,
    ParseTree,
    parse_conllu,
    relation_breakdown,
    report,
    uas_las,
)

from helpers import R_TEXT, make_sentence


def gold_r():
    return parse_conllu(R_TEXT)


def test_perfect_prediction():
    tb = gold_r()
    pred = [ParseTree([3, 3, 0], ["nsubj", "obj", "root"])]
    score = uas_las(tb, pred)
    assert score.uas == 100.0
    assert score.las == 100.0
    assert score.counts() == {"total": 3, "correct_heads": 3,
                              "correct_labeled": 3}


def test_wrong_label_counts():
    pred = [ParseTree([3, 3, 0], ["obj", "obj", "root"])]
    score = uas_las(gold_r(), pred)
    assert score.uas == 100.0
    assert score.las == pytest.approx(200 / 3, abs=0.005)


def test_wrong_head_counts():
    pred = [ParseTree([1, 3, 0], ["nsubj", "obj", "root"])]
    score = uas_las(gold_r(), pred)
    assert score.uas == pytest.approx(200 / 3, abs=0.005)
    assert score.las == pytest.approx(200 / 3, abs=0.005)


def test_wrong_head_never_counts_label():
    # label happens to match but the head is wrong: no LAS credit
    pred = [ParseTree([1, 3, 0], ["nsubj", "nsubj", "root"])]
    score = uas_las(gold_r(), pred)
    assert score.las == pytest.approx(100 / 3, abs=0.005)


def test_alignment_errors():
    with pytest.raises(ContractError):
        uas_las(gold_r(), [])
    with pytest.raises(ContractError, match="sentence 0"):
        uas_las(gold_r(), [ParseTree([0], ["root"])])


def test_punct_policy():
    sent = make_sentence([2, 0, 2], deprels=["nsubj", "root", "punct"],
                         upos=["NOUN", "VERB", "PUNCT"])
    pred = [ParseTree([2, 0, 1], ["nsubj", "root", "punct"])]
    inc = uas_las([sent], pred, punct_policy="include")
    exc = uas_las([sent], pred, punct_policy="exclude")
    assert inc.total == 3 and exc.total == 2
    assert inc.uas == pytest.approx(200 / 3, abs=0.005)
    assert exc.uas == 100.0
    with pytest.raises(ConfigError):
        uas_las([sent], pred, punct_policy="sometimes")


def test_punct_policies_agree_without_punct():
    pred = [ParseTree([3, 3, 0], ["nsubj", "obj", "root"])]
    inc = uas_las(gold_r(), pred, "include")
    exc = uas_las(gold_r(), pred, "exclude")
    assert (inc.uas, inc.las) == (exc.uas, exc.las)


def test_order_permutation_invariant():
    a = make_sentence([0], deprels=["root"])
    b = make_sentence([2, 0], deprels=["nsubj", "root"])
    pred_a = ParseTree([0], ["root"])
    pred_b = ParseTree([0, 0], ["nsubj", "root"])
    fwd = uas_las([a, b], [pred_a, pred_b])
    rev = uas_las([b, a], [pred_b, pred_a])
    assert (fwd.uas, fwd.las, fwd.total) == (rev.uas, rev.las, rev.total)


# --- report -----------------------------------------------------------------------


def test_report_rounding():
    score = AttachmentScore(uas=70.66666, las=56.84932, total=100,
                            correct_heads=71, correct_labeled=57)
    text, entries = report([("base", score)])
    assert "70.67" in text
    assert "56.85" in text
    assert entries[0]["run_name"] == "base"


def test_report_empty():
    text, entries = report([])
    assert text == ""
    assert entries == []


def test_report_json_round_trip():
    score = AttachmentScore(81.25, 75.0, 16, 13, 12)
    _, entries = report([("run", score, "ab" * 32)])
    back = json.loads(json.dumps(entries))
    assert back == entries
    assert back[0]["config_digest"] == "ab" * 32
    assert back[0]["counts"]["total"] == 16


def test_report_rejects_las_above_uas():
    bad = AttachmentScore(uas=50.0, las=60.0, total=10, correct_heads=5,
                          correct_labeled=6)
    with pytest.raises(ContractError, match="exceeds"):
        report([("broken", bad)])


def test_relation_breakdown_ordering():
    sent = make_sentence([2, 0, 2, 2], deprels=["amod", "root", "nsubj", "amod"])
    pred = [ParseTree([2, 0, 2, 1], ["amod", "root", "obj", "amod"])]
    table = relation_breakdown([sent], pred)
    assert [row["deprel"] for row in table] == ["amod", "nsubj", "root"]
    amod = table[0]
    assert amod["count"] == 2
    assert amod["head_correct"] == 1
    assert amod["labeled_correct"] == 1
    nsubj = table[1]
    assert nsubj["head_correct"] == 1 and nsubj["labeled_correct"] == 0


def test_report_breakdown_rendering():
    sent = make_sentence([0], deprels=["root"])
    pred = [ParseTree([0], ["root"])]
    score = uas_las([sent], pred)
    table = relation_breakdown([sent], pred)
    text, _ = report([("run", score)], breakdowns={"run": table})
    assert "per-relation accuracy" in text
    assert "root" in text
