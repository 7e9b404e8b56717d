"""Shared builders and independent oracles for the test suite.

The oracles here are written from first principles (explicit walks,
exhaustive enumeration) so they cannot share bugs with the library code
they are used to check.
"""

import itertools
from functools import lru_cache

import numpy as np

from morphparse import Sentence, Token, Treebank, make_feats

R_TEXT = """\
# sent_id = r-1
1\trāmaḥ\trāma\tNOUN\t_\tCase=Nom|Number=Sg\t3\tnsubj\t_\t_
2\tphalam\tphala\tNOUN\t_\tCase=Acc|Number=Sg\t3\tobj\t_\t_
3\tkhādati\tkhād\tVERB\t_\tNumber=Sg|Person=3\t0\troot\t_\t_
"""


def make_sentence(heads, deprels=None, upos=None, forms=None, featmaps=None):
    n = len(heads)
    deprels = deprels or ["dep"] * n
    upos = upos or ["NOUN"] * n
    forms = forms or [f"w{i}" for i in range(1, n + 1)]
    featmaps = featmaps or [{}] * n
    toks = tuple(Token(id=i + 1, form=forms[i], lemma=forms[i], upos=upos[i],
                       feats=make_feats(featmaps[i]), head=heads[i],
                       deprel=deprels[i])
                 for i in range(n))
    return Sentence(toks)


def make_treebank(*sentences):
    return Treebank(tuple(sentences), name="test")


# --- independent tree oracles ----------------------------------------------


def is_single_root_tree(heads):
    """Reachability-based validity check, no shared code with the library."""
    n = len(heads)
    if any(not 0 <= h <= n for h in heads):
        return False
    if sum(1 for h in heads if h == 0) != 1:
        return False
    for start in range(1, n + 1):
        seen = set()
        node = start
        while node != 0:
            if node in seen:
                return False
            seen.add(node)
            node = heads[node - 1]
    return True


def depth_oracle(heads):
    """Steps from each token up to the synthetic root, minus one."""
    out = []
    for start in range(1, len(heads) + 1):
        steps = 0
        node = start
        while node != 0:
            node = heads[node - 1]
            steps += 1
        out.append(steps - 1)
    return out


@lru_cache(maxsize=None)
def all_valid_head_vectors(n):
    """Every single-root head assignment for n tokens, by brute force."""
    vectors = []
    for heads in itertools.product(range(n + 1), repeat=n):
        if is_single_root_tree(heads):
            vectors.append(heads)
    return tuple(vectors)


def random_valid_heads(rng, n):
    while True:
        heads = [int(h) for h in rng.integers(0, n + 1, size=n)]
        if is_single_root_tree(heads):
            return heads


def mst_oracle(score_matrix, heads_pool):
    """Max total score over an explicit pool of head vectors.

    ``score_matrix`` is head-major: score_matrix[h][d-1] is the score of
    attaching token d under head h (h = 0 is the root row).
    """
    S = np.asarray(score_matrix)
    pool = np.asarray(heads_pool)
    cols = np.arange(S.shape[1])
    totals = S[pool, cols].sum(axis=1)
    best = int(np.argmax(totals))
    return float(totals[best]), [int(h) for h in pool[best]]
