"""Attachment scoring (UAS/LAS) and experiment reporting."""

from dataclasses import dataclass

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class AttachmentScore:
    """Percentages plus the raw counts they were computed from."""
    uas: float
    las: float
    total: int
    correct_heads: int
    correct_labeled: int

    def counts(self):
        return {"total": self.total, "correct_heads": self.correct_heads,
                "correct_labeled": self.correct_labeled}


def uas_las(gold, pred, punct_policy="include"):
    """Score predicted trees against a gold treebank.

    UAS counts tokens whose head is correct, LAS those with head and
    label both correct. ``exclude`` drops tokens tagged PUNCT from both
    numerator and denominator.
    """
    if punct_policy not in ("include", "exclude"):
        raise ConfigError(f"punct_policy must be include or exclude, got {punct_policy!r}")
    gold_sents = list(gold)
    if len(gold_sents) != len(pred):
        raise ContractError(
            f"uas_las: {len(gold_sents)} gold sentences vs {len(pred)} predictions")
    total = heads_ok = labeled_ok = 0
    for k, (sent, tree) in enumerate(zip(gold_sents, pred)):
        if len(tree.heads) != len(sent.tokens) or len(tree.labels) != len(sent.tokens):
            raise ContractError(f"uas_las: token count mismatch in sentence {k}")
        for tok, ph, pl in zip(sent.tokens, tree.heads, tree.labels):
            if punct_policy == "exclude" and tok.upos == "PUNCT":
                continue
            total += 1
            if ph == tok.head:
                heads_ok += 1
                if pl == tok.deprel:
                    labeled_ok += 1
    if total == 0:
        return AttachmentScore(0.0, 0.0, 0, 0, 0)
    return AttachmentScore(100.0 * heads_ok / total, 100.0 * labeled_ok / total,
                           total, heads_ok, labeled_ok)


def relation_breakdown(gold, pred):
    """Per-gold-relation attachment and labeling accuracy, most frequent first."""
    stats = {}
    for sent, tree in zip(gold, pred):
        for tok, ph, pl in zip(sent.tokens, tree.heads, tree.labels):
            row = stats.setdefault(tok.deprel, {"count": 0, "head_correct": 0,
                                                "labeled_correct": 0})
            row["count"] += 1
            if ph == tok.head:
                row["head_correct"] += 1
                if pl == tok.deprel:
                    row["labeled_correct"] += 1
    return [{"deprel": rel, **stats[rel]}
            for rel in sorted(stats, key=lambda r: (-stats[r]["count"], r))]


def report(results, breakdowns=None):
    """Render named scores as a fixed-order table plus a JSON-ready list.

    ``results`` is a list of (name, AttachmentScore) pairs, optionally
    (name, AttachmentScore, config_digest). Every entry must satisfy
    LAS <= UAS; a violation is a scoring bug, not a result.
    """
    rows = []
    entries = []
    for item in results:
        name, score = item[0], item[1]
        digest = item[2] if len(item) > 2 else None
        if score.las > score.uas:
            raise ContractError(
                f"{name}: LAS {score.las} exceeds UAS {score.uas}; scoring is broken")
        rows.append((name, score))
        entry = {"run_name": name, "uas": score.uas, "las": score.las,
                 "counts": score.counts()}
        if digest is not None:
            entry["config_digest"] = digest
        entries.append(entry)

    if not rows:
        return "", []
    width = max(len(name) for name, _ in rows)
    lines = [f"{'system':<{width}}    UAS    LAS"]
    for name, score in rows:
        lines.append(f"{name:<{width}}  {score.uas:6.2f} {score.las:6.2f}")
    if breakdowns:
        for name, table in breakdowns.items():
            lines.append("")
            lines.append(f"{name}: per-relation accuracy")
            for row in table:
                frac_h = row["head_correct"] / row["count"]
                frac_l = row["labeled_correct"] / row["count"]
                lines.append(f"  {row['deprel']:<12} n={row['count']:<5d} "
                             f"head {100 * frac_h:6.2f}  labeled {100 * frac_l:6.2f}")
    return "\n".join(lines) + "\n", entries
