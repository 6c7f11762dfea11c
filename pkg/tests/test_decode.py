"""Trie construction and constrained beam search against exhaustive oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import semindex as si
from semindex import errors

from conftest import enumerate_sequence_scores, make_corpus, micro_model


def tree_and_trie(seed=0, n=60, dim=6, k=3, c=6, m=0):
    rng = np.random.default_rng(seed)
    corpus = make_corpus(rng, n, dim)
    tree = si.build_tree(corpus, k=k, c=c, seed=seed)
    return corpus, tree, si.build_trie(tree, m)


def model_for(trie, k, seed=0, perturb=0.1):
    model = micro_model(k=k, max_semid_len=trie.max_depth + 1, seed=seed,
                        hidden=8, adaptor_hidden=4)
    if perturb:
        rng = np.random.default_rng(seed + 1)
        model.params["adp.proj.w"] = rng.normal(0, perturb, model.params["adp.proj.w"].shape)
        model.params["adp.proj.b"] = rng.normal(0, perturb, model.params["adp.proj.b"].shape)
    return model


# --- trie structure ---

def test_trie_terminals_match_identifier_groups():
    corpus, tree, trie = tree_and_trie()
    groups = tree.semid_groups(0)
    assert set(trie.paths()) == set(groups)
    assert trie.n_terminals() == len(groups)
    assert trie.paths() == sorted(trie.paths())


def test_trie_truncation_merges_paths():
    corpus, tree, trie0 = tree_and_trie(seed=2, n=120, c=5)
    if tree.min_leaf_depth() < 1:
        pytest.skip("tree too shallow to truncate")
    trie1 = si.build_trie(tree, 1)
    assert trie1.n_terminals() <= trie0.n_terminals()
    assert trie1.max_depth <= trie0.max_depth
    # every truncated path is a prefix of some full path
    fulls = trie0.paths()
    for p in trie1.paths():
        assert any(f[:len(p)] == p for f in fulls)


def test_trie_infeasible_truncation():
    corpus, tree, _ = tree_and_trie()
    with pytest.raises(errors.TruncationTooDeep):
        si.build_trie(tree, tree.max_depth() + 1)


def test_trie_hash_binds_to_tree_structure():
    corpus, tree, trie = tree_and_trie()
    assert trie.tree_hash == tree.structure_hash()
    # inserting an item keeps the structure (and the binding) intact
    rep = si.normalize(np.ones(6, dtype=np.float32))
    si.insert_item(tree, si.make_record("newbie", rep=rep))
    assert trie.tree_hash == tree.structure_hash()
    assert trie.tree_hash != tree.content_hash()


# --- beam search ---

def test_beam_equals_enumeration_oracle():
    corpus, tree, trie = tree_and_trie(seed=3)
    model = model_for(trie, tree.k, seed=3)
    paths = trie.paths()
    query = [2, 5, 1]
    out = si.beam_search(model, query, trie, len(paths), len(paths))
    oracle = enumerate_sequence_scores(model, query, paths)
    ranked = sorted(oracle.items(), key=lambda kv: (-kv[1], kv[0]))
    assert [s.tokens for s, _ in out] == [p for p, _ in ranked]
    for (semid, score), (path, want) in zip(out, ranked):
        assert score == want  # bit-equal accumulation, not just close


def test_beam_width_one_is_greedy():
    corpus, tree, trie = tree_and_trie(seed=4)
    model = model_for(trie, tree.k, seed=4)
    out = si.beam_search(model, [1, 2], trie, 1, 1)
    assert len(out) == 1
    # greedy by construction: follow locally best allowed token each step
    enc = model.encode([1, 2])
    node, tokens, position = trie.root, (0,), 1
    while True:
        logp = model.step_logprobs(enc, tokens, position)
        options = {}
        if node.terminal:
            options[model.cfg.end_id] = float(logp[model.cfg.end_id])
        for label in node.children:
            options[label] = float(logp[label])
        pick = max(sorted(options), key=lambda t: (options[t], -t))
        if pick == model.cfg.end_id:
            break
        tokens += (pick,)
        node = node.children[pick]
        position += 1
    # the emitted identifier must score at least as well as the greedy path
    assert out[0][1] >= model.sequence_logprob([1, 2], list(tokens) + [model.cfg.end_id]) - 1e-12


def test_wider_beam_never_hurts_the_best_score():
    corpus, tree, trie = tree_and_trie(seed=5, n=120, c=5)
    model = model_for(trie, tree.k, seed=5)
    best = []
    for width in (1, 2, 4, 8, max(16, trie.n_terminals())):
        out = si.beam_search(model, [3], trie, width, 1)
        best.append(out[0][1])
    assert all(b >= a - 1e-12 for a, b in zip(best, best[1:]))


def test_emitted_identifiers_are_always_valid():
    corpus, tree, trie = tree_and_trie(seed=6, n=100, c=5)
    groups = set(tree.semid_groups(0))
    rng = np.random.default_rng(6)
    for trial in range(10):
        model = model_for(trie, tree.k, seed=trial, perturb=0.5)
        query = [int(x) for x in rng.integers(1, 15, size=3)]
        for semid, score in si.beam_search(model, query, trie, 8, 4):
            assert semid.tokens in groups
            assert np.isfinite(score)


def test_beam_ties_break_lexicographically():
    """A uniform model scores all paths of equal length identically."""
    corpus, tree, trie = tree_and_trie(seed=7)
    model = model_for(trie, tree.k, seed=7, perturb=0.0)  # exactly uniform
    out = si.beam_search(model, [1], trie, trie.n_terminals(), trie.n_terminals())
    by_len = {}
    for semid, score in out:
        by_len.setdefault(len(semid.tokens), []).append(semid.tokens)
    for length, toks in by_len.items():
        assert toks == sorted(toks)


def test_beam_argument_validation():
    corpus, tree, trie = tree_and_trie(seed=8)
    model = model_for(trie, tree.k)
    with pytest.raises(ValueError):
        si.beam_search(model, [1], trie, 1, 2)
    with pytest.raises(ValueError):
        si.beam_search(model, [1], trie, 0, 0)


def test_beam_rejects_too_shallow_model():
    corpus, tree, trie = tree_and_trie(seed=9, n=150, c=4)
    if trie.max_depth < 3:
        pytest.skip("need a deep trie")
    shallow = micro_model(k=tree.k, max_semid_len=2, hidden=8, adaptor_hidden=4)
    with pytest.raises(errors.TruncationTooDeep):
        si.beam_search(shallow, [1], trie, 4, 4)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_beam_oracle_equivalence_property(seed):
    rng = np.random.default_rng(seed)
    corpus = make_corpus(rng, int(rng.integers(20, 80)), 5)
    tree = si.build_tree(corpus, k=3, c=6, seed=int(rng.integers(0, 100)))
    trie = si.build_trie(tree, 0)
    model = model_for(trie, 3, seed=int(seed % 1000), perturb=0.3)
    paths = trie.paths()
    query = [int(x) for x in rng.integers(1, 15, size=int(rng.integers(1, 5)))]
    out = si.beam_search(model, query, trie, len(paths), len(paths))
    oracle = enumerate_sequence_scores(model, query, paths)
    ranked = sorted(oracle.items(), key=lambda kv: (-kv[1], kv[0]))
    assert [s.tokens for s, _ in out] == [p for p, _ in ranked]
    assert all(score == oracle[s.tokens] for s, score in out)
