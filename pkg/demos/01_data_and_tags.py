"""Data layer tour: synthetic treebanks, CoNLL-U round trips, tag schemes.

Run me:  python3 demos/01_data_and_tags.py
"""

from morphparse import (TagScheme, derive_tags, gen_synthetic, parse_conllu,
                        validate_tree, write_conllu)

# A deterministic toy treebank: case-marked nouns around a verb, with a
# grammar small enough to read but rich enough to make tagging non-trivial.
tb = gen_synthetic(seed=7, n_sentences=3, name="demo")
text = write_conllu(tb)
print("--- generated CoNLL-U ".ljust(60, "-"))
print(text)

# Round trip: parse the serialization back and confirm nothing moved.
again = parse_conllu(text)
assert write_conllu(again) == text
print("round trip: byte-identical\n")

# Every sentence carries a valid single-root tree.
for i, sent in enumerate(tb):
    check = validate_tree(sent)
    print(f"sentence {i}: {len(sent.tokens)} tokens, valid tree: {bool(check)}")

# Tag schemes re-describe the same sentence from different angles: some
# read the morphology column, some the tree shape, some the syntax labels.
sent = tb.sentences[0]
schemes = (TagScheme.CT, TagScheme.GT, TagScheme.RD,
           TagScheme.NC, TagScheme.RP, TagScheme.LT)
columns = [derive_tags(sent, s).labels for s in schemes]
widths = [max(len(s.value), max(len(l) for l in col)) + 2
          for s, col in zip(schemes, columns)]
print("\n--- tag schemes for sentence 0 ".ljust(60, "-"))
print(f"{'form':<12}" + "".join(f"{s.value:>{w}}" for s, w in zip(schemes, widths)))
for row, form in enumerate(sent.forms):
    cells = "".join(f"{col[row]:>{w}}" for col, w in zip(columns, widths))
    print(f"{form:<12}{cells}")
print("\nfull morphology tags (MT):")
for form, label in zip(sent.forms, derive_tags(sent, TagScheme.MT).labels):
    print(f"  {form:<12}{label}")
