"""Synthetic fixture for the constant-vs-linear latency benchmark.

Corpora of increasing size share a single tree shape: the smallest corpus is
clustered once, then extra items are appended to existing leaves, so stage-1
generation cost is structurally identical across sizes while the one-to-all
baseline has more work to do.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import build_trie
from .embeddings import EmbeddingCorpus, make_record, normalize
from .pipeline import Engine
from .seq2seq import ModelConfig, PawaModel
from .textdata import build_vocab, synth_corpus, synth_query_embeddings
from .tree import build_tree, deserialize_tree, insert_item, serialize_tree


@dataclass
class ScalingFixture:
    engines: dict[int, Engine]
    queries: list[tuple[str, np.ndarray]]


def build_scaling_fixture(
    sizes=(1000, 3000, 5000, 10000),
    dim: int = 32,
    n_queries: int = 100,
    seed: int = 0,
    k: int = 4,
    c: int = 12,
    top_k: int = 5,
) -> ScalingFixture:
    sizes = tuple(sorted(sizes))
    g = 25
    corpus, queries, _ = synth_corpus(g=g, n_per=max(1, sizes[0] // g), q_per=1, dim=dim, seed=seed)
    base_size = len(corpus)  # g may not divide the requested base size
    base_tree = build_tree(corpus, k=k, c=c, seed=seed)
    base_blob = serialize_tree(base_tree)

    vocab = build_vocab(q.text for q in queries)
    cfg = ModelConfig(
        vocab_size=len(vocab),
        k=k,
        max_semid_len=base_tree.max_depth() + 2,
        hidden=32,
        enc_layers=1,
        heads=4,
        max_query_len=16,
        dropout=0.0,
        adaptor_hidden=16,
    )
    model = PawaModel.init(cfg, seed=seed)

    rng = np.random.default_rng(seed + 7)
    base_reps = corpus.rep_matrix().astype(np.float64)
    engines: dict[int, Engine] = {}
    for size in sizes:
        tree = deserialize_tree(base_blob)
        records = list(corpus.records)
        for idx in range(size - base_size):
            anchor = base_reps[int(rng.integers(len(base_reps)))]
            rep = normalize(anchor + rng.normal(0.0, 0.05, size=dim))
            rec = make_record(f"extra_{size}_{idx:05d}", rep=rep)
            insert_item(tree, rec)
            records.append(rec)
        sized = EmbeddingCorpus(dim=dim, records=records)
        engines[size] = Engine(
            corpus=sized, tree=tree, trie=build_trie(tree, 0), model=model,
            vocab=vocab, m=0, top_k=top_k,
        )

    embs = synth_query_embeddings(queries[:n_queries], corpus, seed=seed + 13)
    pairs = [(queries[i].text, embs[i]) for i in range(min(n_queries, len(queries)))]
    return ScalingFixture(engines=engines, queries=pairs)
