"""Top-level acceptance gate: one test per shipping criterion.

Each test prints a single PASS line (visible with ``pytest -s``); the
``pytest -v`` report itself gives one pass/fail line per criterion.
"""
import itertools
import math
import time
from collections import defaultdict

import numpy as np
import pytest

import semindex as si
from semindex.pipeline import Engine, bench_scaling, brute_force_rank, eval_recall, retrieve
from semindex.seq2seq import ModelConfig, TrainConfig, train
from semindex.textdata import TrainingPair
from semindex.tree import SemId

from conftest import enumerate_sequence_scores, fd_gradcheck, make_corpus, micro_model


def test_criterion_01_gradient_correctness():
    """Analytic gradients match central finite differences on a micro config."""
    start = time.perf_counter()
    model = micro_model(k=3, vocab_size=20, hidden=8, max_semid_len=3,
                        adaptor_hidden=4, enc_layers=1, heads=2)
    batch = [
        TrainingPair(query_tokens=(3, 7, 2), target=SemId((0, 1))),
        TrainingPair(query_tokens=(5,), target=SemId((0, 2))),
        TrainingPair(query_tokens=(4, 4), target=SemId((0,))),
    ]
    worst = fd_gradcheck(model, batch, h=1e-4)
    elapsed = time.perf_counter() - start
    assert worst < 1e-4, f"worst relative error {worst:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"\nPASS criterion 1: gradcheck max rel err {worst:.2e} (< 1e-4) in {elapsed:.1f}s")


def test_criterion_02_probability_normalization():
    """Sequence probabilities sum to 1 unconstrained, <= 1 under a trie."""
    start = time.perf_counter()
    model = micro_model(k=3, max_semid_len=4, seed=5, hidden=8, adaptor_hidden=4)
    rng = np.random.default_rng(2)
    model.params["adp.proj.w"] = rng.normal(0, 0.1, model.params["adp.proj.w"].shape)
    model.params["adp.proj.b"] = rng.normal(0, 0.1, model.params["adp.proj.b"].shape)
    enc = model.encode([2, 3, 4])
    end, v, n_pos = model.cfg.end_id, model.cfg.semid_vocab, model.cfg.n_positions
    non_end = [t for t in range(v) if t != end]

    # END-terminated sequences plus maximal END-less ones partition outcomes
    total = 0.0
    for length in range(n_pos + 1):
        for interior in itertools.product(non_end, repeat=length):
            seq = (0, *interior)
            logp = sum(float(model.step_logprobs(enc, list(seq[:i]), i)[seq[i]])
                       for i in range(1, len(seq)))
            if length < n_pos:
                logp += float(model.step_logprobs(enc, list(seq), length + 1)[end])
            total += math.exp(logp)
    assert abs(total - 1.0) < 1e-6, f"unconstrained mass {total}"

    corpus = make_corpus(np.random.default_rng(3), 40, 5)
    tree = si.build_tree(corpus, k=3, c=6, seed=1)
    trie = si.build_trie(tree, 0)
    cmodel = micro_model(k=3, max_semid_len=trie.max_depth + 1, seed=5,
                         hidden=8, adaptor_hidden=4)
    cmodel.params["adp.proj.w"] = rng.normal(0, 0.1, cmodel.params["adp.proj.w"].shape)
    cmodel.params["adp.proj.b"] = rng.normal(0, 0.1, cmodel.params["adp.proj.b"].shape)
    constrained = sum(
        math.exp(cmodel.sequence_logprob([2, 3, 4], list(p) + [cmodel.cfg.end_id]))
        for p in trie.paths()
    )
    elapsed = time.perf_counter() - start
    assert constrained <= 1.0 + 1e-12, f"constrained mass {constrained}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    print(f"\nPASS criterion 2: full mass {total:.9f} (1 +- 1e-6), "
          f"trie-constrained mass {constrained:.6f} <= 1, in {elapsed:.1f}s")


def test_criterion_03_beam_search_oracle_equivalence():
    """100 random instances: beam output equals exhaustive enumeration exactly."""
    start = time.perf_counter()
    rng = np.random.default_rng(100)
    checked = 0
    while checked < 100:
        corpus = make_corpus(rng, int(rng.integers(12, 45)), 5, prefix=f"c{checked}_")
        tree = si.build_tree(corpus, k=3, c=5, seed=int(rng.integers(0, 1000)))
        trie = si.build_trie(tree, 0)
        paths = trie.paths()
        if len(paths) > 16:
            continue
        model = micro_model(k=3, max_semid_len=trie.max_depth + 1, hidden=8,
                            adaptor_hidden=4, seed=int(rng.integers(0, 1000)))
        model.params["adp.proj.w"] = rng.normal(0, 0.3, model.params["adp.proj.w"].shape)
        model.params["adp.proj.b"] = rng.normal(0, 0.3, model.params["adp.proj.b"].shape)
        query = [int(x) for x in rng.integers(1, 15, size=int(rng.integers(1, 6)))]
        out = si.beam_search(model, query, trie, max(len(paths), 1), len(paths))
        oracle = enumerate_sequence_scores(model, query, paths)
        ranked = sorted(oracle.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [s.tokens for s, _ in out] == [p for p, _ in ranked], f"instance {checked}"
        assert all(score == oracle[s.tokens] for s, score in out), f"instance {checked}"
        checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"\nPASS criterion 3: 100/100 beam-vs-enumeration instances exact in {elapsed:.1f}s")


def test_criterion_04_constrained_validity():
    """1000 random-parameter decodes emit only terminal trie paths."""
    rng = np.random.default_rng(200)
    worlds = []
    for w in range(5):
        corpus = make_corpus(rng, int(rng.integers(40, 120)), 6, prefix=f"w{w}_")
        tree = si.build_tree(corpus, k=3, c=6, seed=w)
        trie = si.build_trie(tree, 0)
        worlds.append((tree, trie, set(tree.semid_groups(0))))
    emitted = 0
    for trial in range(250):
        tree, trie, valid = worlds[trial % len(worlds)]
        model = micro_model(k=3, max_semid_len=trie.max_depth + 1, hidden=8,
                            adaptor_hidden=4, seed=trial)
        for key in ("adp.proj.w", "adp.proj.b", "adp.down.w", "adp.down.b"):
            model.params[key] = rng.normal(0, 1.0, model.params[key].shape)
        query = [int(x) for x in rng.integers(1, 15, size=3)]
        for semid, score in si.beam_search(model, query, trie, 4, 4):
            assert semid.tokens in valid
            assert np.isfinite(score)
            emitted += 1
    assert emitted >= 1000, f"only {emitted} decodes emitted"
    print(f"\nPASS criterion 4: {emitted}/{emitted} emitted identifiers are terminal trie paths")


def test_criterion_05_tree_invariants():
    """50 random corpora: partition, capacity, round trip, determinism."""
    rng = np.random.default_rng(300)
    sizes = [int(x) for x in rng.integers(20, 2000, size=48)] + [5000, 3000]
    for trial, n in enumerate(sizes):
        dim = int(rng.integers(4, 12))
        corpus = make_corpus(rng, n, dim, prefix=f"t{trial}_")
        # inject duplicates: clone one rep across several items
        records = list(corpus.records)
        dup_rep = records[0].rep.copy()
        for j in range(1, int(rng.integers(2, 8))):
            records[j] = si.make_record(records[j].item_id, rep=dup_rep.copy())
        corpus = si.EmbeddingCorpus(dim=dim, records=records)
        k = int(rng.integers(2, 6))
        c = int(rng.integers(3, 40))
        seed = int(rng.integers(0, 10_000))
        tree = si.build_tree(corpus, k=k, c=c, seed=seed)

        members = [item for leaf in tree.leaves() for item in leaf.members]
        assert sorted(members) == sorted(corpus.item_ids()), f"trial {trial}: not a partition"
        assert len(members) == len(set(members)), f"trial {trial}: overlapping leaves"
        for leaf in tree.leaves():
            if not leaf.stagnated:
                assert len(leaf.members) <= c, f"trial {trial}: oversized unflagged leaf"

        blob = si.serialize_tree(tree)
        assert si.serialize_tree(si.deserialize_tree(blob)) == blob, f"trial {trial}: round trip"
        assert si.serialize_tree(si.build_tree(corpus, k=k, c=c, seed=seed)) == blob, \
            f"trial {trial}: nondeterministic"
    print("\nPASS criterion 5: 50/50 random corpora satisfy partition/capacity/round-trip/determinism")


@pytest.mark.slow
def test_criterion_06_memorization_and_stage1_recall():
    """200 epochs on the 16-cluster corpus: >=99% training reproduction,
    >=95% stage-1 hit rate on 100 held-out queries, under 15 minutes."""
    start = time.perf_counter()
    corpus, queries, truth = si.synth_corpus(g=16, n_per=40, q_per=12, dim=32, seed=5)
    by_item = defaultdict(list)
    for q in queries:
        by_item[q.item_id].append(q)
    train_queries, held = [], []
    for item, qs in by_item.items():
        train_queries.extend(qs[:10])  # 10 queries per item for training
        held.extend(qs[10:])
    rng = np.random.default_rng(123)
    held_sample = [held[i] for i in rng.choice(len(held), size=100, replace=False)]

    tree = si.build_tree(corpus, k=16, c=40, seed=7)
    vocab = si.build_vocab(q.text for q in train_queries)
    pairs = si.build_training_pairs(tree, train_queries, vocab, m=0)
    assert len(pairs) == 6400
    cfg = ModelConfig(
        vocab_size=len(vocab), k=16,
        max_semid_len=max(len(p.target.tokens) for p in pairs) + 1,
        hidden=32, enc_layers=1, heads=4, max_query_len=16,
        dropout=0.0, adaptor_hidden=16,
    )
    model, history = train(pairs, cfg, TrainConfig(epochs=200, seed=0))

    trie = si.build_trie(tree, 0)
    reproduced = sum(
        si.beam_search(model, list(p.query_tokens), trie, 1, 1)[0][0].tokens == p.target.tokens
        for p in pairs
    )
    hits = 0
    for q in held_sample:
        tokens = si.tokenize(q.text, vocab, max_len=cfg.max_query_len)
        ranking = si.beam_search(model, tokens, trie, 22, 11)
        target = si.assign_semid(tree, q.item_id).tokens
        hits += any(semid.tokens == target for semid, _ in ranking)
    elapsed = time.perf_counter() - start

    assert reproduced >= 0.99 * len(pairs), f"reproduction {reproduced}/{len(pairs)}"
    assert hits >= 95, f"stage-1 hit rate {hits}/100"
    assert elapsed < 900.0, f"took {elapsed:.0f}s"
    print(f"\nPASS criterion 6: reproduction {reproduced}/{len(pairs)} "
          f"({100 * reproduced / len(pairs):.2f}%), stage-1 hits {hits}/100, "
          f"loss {history[0]:.3f}->{history[-1]:.5f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_07_two_stage_vs_brute_force_scaling():
    """Stage-1 latency constant in corpus size; brute force linear; two-stage
    at 10k at most half of brute force at 10k."""
    from semindex.bench import build_scaling_fixture

    fixture = build_scaling_fixture(sizes=(1000, 3000, 5000, 10000), dim=32,
                                    n_queries=100, seed=0)
    rows = {row.corpus_size: row for row in bench_scaling(fixture.engines, fixture.queries)}
    s1_ratio = rows[10000].stage1_ms / rows[1000].stage1_ms
    bf_ratio = rows[10000].brute_force_ms / rows[1000].brute_force_ms
    total_ratio = rows[10000].two_stage_ms / rows[10000].brute_force_ms
    assert s1_ratio <= 1.2, f"stage-1 grew {s1_ratio:.2f}x from 1k to 10k"
    assert bf_ratio >= 5.0, f"brute force grew only {bf_ratio:.2f}x from 1k to 10k"
    assert total_ratio <= 0.5, f"two-stage is {total_ratio:.2f}x brute force at 10k"
    print(f"\nPASS criterion 7: stage-1 10k/1k {s1_ratio:.2f}x (<= 1.2), "
          f"brute 10k/1k {bf_ratio:.1f}x (>= 5), "
          f"two-stage/brute at 10k {total_ratio:.2f} (<= 0.5)")


def test_criterion_08_degenerate_equivalence():
    """With top_k covering every identifier, two-stage R@K equals brute force."""
    corpus, queries, truth, tree, vocab = _shared_world()
    trie = si.build_trie(tree, 0)
    model = micro_model(k=tree.k, vocab_size=len(vocab), max_semid_len=trie.max_depth + 1,
                        hidden=8, adaptor_hidden=4, max_query_len=16)
    engine = Engine(corpus=corpus, tree=tree, trie=trie, model=model, vocab=vocab,
                    m=0, top_k=trie.n_terminals())
    qids = sorted(truth)
    for trial in range(20):
        rng = np.random.default_rng(800 + trial)
        sample = [qids[i] for i in rng.choice(len(qids), size=15, replace=False)]
        embs = si.synth_query_embeddings([_query_for(queries, truth, qid) for qid in sample],
                                         corpus, seed=trial)
        two_stage, brute = {}, {}
        for qid, emb in zip(sample, embs):
            rec = _query_for(queries, truth, qid)
            two_stage[qid] = retrieve(engine, rec.text, emb)
            brute[qid] = brute_force_rank(emb, corpus)
        gt = {qid: truth[qid] for qid in sample}
        rep_a = eval_recall(two_stage, gt, ks=(1, 5, 10))
        rep_b = eval_recall(brute, gt, ks=(1, 5, 10))
        assert rep_a.recall_at == rep_b.recall_at, f"set {trial}"
    print("\nPASS criterion 8: two-stage R@K == brute-force R@K on 20/20 query sets")


def test_criterion_09_insertion_oracle():
    """500 random insertions match the linear-scan max-cosine-leaf oracle."""
    rng = np.random.default_rng(900)
    corpus = make_corpus(rng, 400, 8)
    tree = si.build_tree(corpus, k=4, c=10, seed=2)
    ok = 0
    for i in range(500):
        rep = si.normalize(rng.normal(size=8).astype(np.float32))
        best_id, best_sim = None, -np.inf
        for leaf in sorted(tree.leaves(), key=lambda n: n.node_id):
            sim = float(leaf.centroid @ rep.astype(np.float64))
            if sim > best_sim:  # strict: ties keep the lowest node_id
                best_id, best_sim = leaf.node_id, sim
        got = si.insert_item(tree, si.make_record(f"ins{i}", rep=rep))
        ok += got.tokens == tree.path_tokens(best_id)
    assert ok == 500, f"{ok}/500 agreed with the oracle"
    print("\nPASS criterion 9: 500/500 insertions match the linear-scan oracle")


def test_criterion_10_parameter_sweep_harness(tmp_path, capsys):
    """The eval CLI sweeps truncation length and top-k; candidate-set size is
    non-decreasing in both."""
    from semindex.cli import main

    corpus, queries, truth, tree, vocab = _deep_world()
    assert tree.min_leaf_depth() >= 2, "fixture must support m in {0,1,2}"
    paths = {
        "corpus": tmp_path / "corpus.bin",
        "queries": tmp_path / "queries.jsonl",
        "qembs": tmp_path / "qembs.jsonl",
        "tree": tmp_path / "tree.json",
        "ckpt": tmp_path / "model.npz",
    }
    si.save_corpus(corpus, paths["corpus"])
    sample = queries[:30]
    si.save_queries(sample, paths["queries"])
    embs = si.synth_query_embeddings(sample, corpus, seed=1)
    import json
    with open(paths["qembs"], "w") as fh:
        for idx, emb in enumerate(embs):
            fh.write(json.dumps({"query_id": str(idx), "values": [float(v) for v in emb]}) + "\n")
    with open(paths["tree"], "wb") as fh:
        fh.write(si.serialize_tree(tree))
    model = micro_model(k=tree.k, vocab_size=len(vocab), max_semid_len=tree.max_depth() + 2,
                        hidden=8, adaptor_hidden=4, max_query_len=16)
    si.save_checkpoint(model, paths["ckpt"], vocab=vocab)

    assert main([
        "eval", "--ckpt", str(paths["ckpt"]), "--tree", str(paths["tree"]),
        "--corpus", str(paths["corpus"]), "--queries", str(paths["queries"]),
        "--query-embs", str(paths["qembs"]), "--topk", "11",
        "--sweep", "--sweep-m", "0", "1", "2",
    ]) == 0
    out = capsys.readouterr().out
    table = {}
    for line in out.splitlines():
        cols = line.split()
        if len(cols) == 5 and cols[0].isdigit():
            m, top_k = int(cols[0]), int(cols[1])
            table[(m, top_k)] = float(cols[4])
    assert set(table) == {(m, t) for m in (0, 1, 2) for t in range(1, 16)}
    for m in (0, 1, 2):
        sizes = [table[(m, t)] for t in range(1, 16)]
        assert all(b >= a - 1e-9 for a, b in zip(sizes, sizes[1:])), f"not monotone in top_k at m={m}"
    for t in range(1, 16):
        sizes = [table[(m, t)] for m in (0, 1, 2)]
        assert all(b >= a - 1e-9 for a, b in zip(sizes, sizes[1:])), f"not monotone in m at top_k={t}"
    print("\nPASS criterion 10: sweep table emitted; candidate size non-decreasing "
          "in top_k and in m")


# --- fixture worlds shared by criteria 8 and 10 ---

def _shared_world():
    corpus, queries, truth = si.synth_corpus(g=5, n_per=12, q_per=12, dim=16, seed=31)
    tree = si.build_tree(corpus, k=4, c=10, seed=4)
    vocab = si.build_vocab(q.text for q in queries)
    return corpus, queries, truth, tree, vocab


def _deep_world():
    corpus, queries, truth = si.synth_corpus(g=8, n_per=30, q_per=2, dim=16, seed=41)
    tree = si.build_tree(corpus, k=3, c=6, seed=2)
    vocab = si.build_vocab(q.text for q in queries)
    return corpus, queries, truth, tree, vocab


def _query_for(queries, truth, qid):
    item_id, _, idx = qid.partition("#q")
    count = 0
    for q in queries:
        if q.item_id == item_id:
            if count == int(idx):
                return q
            count += 1
    raise KeyError(qid)
