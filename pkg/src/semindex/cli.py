"""Command-line front end tying the engine together.

Subcommands: synth, build-tree, assign-ids, train, decode, retrieve, eval,
bench-scaling, insert. A JSON config file may supply defaults for any of the
shared knobs (k, c, m, top_k, beam_width, model dims, seeds); explicit flags
win over the config, which wins over built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import pipeline
from .decode import beam_search, build_trie
from .embeddings import load_corpus, make_record, save_corpus
from .seq2seq import ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train
from .textdata import (
    build_training_pairs,
    build_vocab,
    load_queries,
    save_queries,
    synth_corpus,
    synth_query_embeddings,
    tokenize,
)
from .tree import assign_semid, build_tree, deserialize_tree, insert_item, serialize_tree

log = logging.getLogger("semindex")

DEFAULTS = {
    "k": 30,
    "c": 30,
    "m": 0,
    "top_k": 11,
    "beam_width": None,
    "hidden": 64,
    "enc_layers": 2,
    "heads": 4,
    "max_query_len": 64,
    "dropout": 0.1,
    "adaptor_hidden": 32,
    "epochs": 50,
    "batch_size": 16,
    "seed": 0,
    "format": "binary",
}


def _setting(args, config: dict, key: str):
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _load_tree(path):
    with open(path, "rb") as fh:
        return deserialize_tree(fh.read())


def _save_tree(tree, path):
    with open(path, "wb") as fh:
        fh.write(serialize_tree(tree))


def _load_query_embs(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[str(obj["query_id"])] = np.asarray(obj["values"], dtype=np.float32)
    return out


def _model_config(args, config, vocab_size, max_semid_len, k):
    return ModelConfig(
        vocab_size=vocab_size,
        k=k,
        max_semid_len=max_semid_len,
        hidden=_setting(args, config, "hidden"),
        enc_layers=_setting(args, config, "enc_layers"),
        heads=_setting(args, config, "heads"),
        max_query_len=_setting(args, config, "max_query_len"),
        dropout=_setting(args, config, "dropout"),
        adaptor_hidden=_setting(args, config, "adaptor_hidden"),
    )


# --- subcommands ---

def cmd_synth(args, config):
    corpus, queries, truth = synth_corpus(
        g=args.clusters, n_per=args.items_per_cluster, q_per=args.queries_per_item,
        dim=args.dim, seed=_setting(args, config, "seed"),
    )
    save_corpus(corpus, args.out_corpus, format=_setting(args, config, "format"))
    save_queries(queries, args.out_queries)
    if args.out_query_embs:
        embs = synth_query_embeddings(queries, corpus, seed=_setting(args, config, "seed"))
        with open(args.out_query_embs, "w", encoding="utf-8") as fh:
            for idx, emb in enumerate(embs):
                fh.write(json.dumps({"query_id": str(idx), "values": [float(v) for v in emb]}) + "\n")
    print(f"wrote {len(corpus)} items, {len(queries)} queries")


def cmd_build_tree(args, config):
    corpus = load_corpus(args.corpus, format=_setting(args, config, "format"))
    tree = build_tree(corpus, k=_setting(args, config, "k"), c=_setting(args, config, "c"),
                      seed=_setting(args, config, "seed"))
    _save_tree(tree, args.out)
    print(f"tree: {len(tree.nodes)} nodes, {len(tree.leaves())} leaves, max depth {tree.max_depth()}")


def cmd_assign_ids(args, config):
    tree = _load_tree(args.tree)
    m = _setting(args, config, "m")
    items = args.items or sorted(tree.leaf_of)
    for item_id in items:
        print(f"{item_id}\t{assign_semid(tree, item_id, m).render()}")


def cmd_train(args, config):
    tree = _load_tree(args.tree)
    m = _setting(args, config, "m")
    queries = load_queries(args.queries)
    if args.sources != "all":
        queries = [q for q in queries if q.source == args.sources]
    vocab = build_vocab(q.text for q in queries)
    max_len = _setting(args, config, "max_query_len")
    pairs = build_training_pairs(tree, queries, vocab, m, max_query_len=max_len)
    max_semid_len = max(len(p.target.tokens) for p in pairs) + 1
    cfg = _model_config(args, config, len(vocab), max_semid_len, tree.k)
    tcfg = TrainConfig(
        epochs=_setting(args, config, "epochs"),
        batch_size=_setting(args, config, "batch_size"),
        seed=_setting(args, config, "seed"),
    )
    model, history = train(pairs, cfg, tcfg)
    save_checkpoint(model, args.out, vocab=vocab)
    print(f"trained on {len(pairs)} pairs for {tcfg.epochs} epochs; "
          f"final loss {history[-1] if history else float('nan'):.4f}")


def cmd_decode(args, config):
    model, vocab = load_checkpoint(args.ckpt)
    tree = _load_tree(args.tree)
    m = _setting(args, config, "m")
    top_k = _setting(args, config, "top_k")
    beam = _setting(args, config, "beam_width") or 2 * top_k
    trie = build_trie(tree, m)
    tokens = tokenize(args.query, vocab, model.cfg.max_query_len)
    for semid, logprob in beam_search(model, tokens, trie, beam, top_k):
        print(f"{semid.render()}\t{logprob:.6f}")


def _make_engine(args, config):
    model, vocab = load_checkpoint(args.ckpt)
    tree = _load_tree(args.tree)
    corpus = load_corpus(args.corpus, format=_setting(args, config, "format"))
    m = _setting(args, config, "m")
    top_k = _setting(args, config, "top_k")
    beam = _setting(args, config, "beam_width")
    return pipeline.Engine(corpus=corpus, tree=tree, trie=build_trie(tree, m),
                           model=model, vocab=vocab, m=m, top_k=top_k, beam_width=beam)


def cmd_retrieve(args, config):
    engine = _make_engine(args, config)
    emb = None
    if args.query_embs and args.query_id is not None:
        emb = _load_query_embs(args.query_embs)[args.query_id]
    result = pipeline.retrieve(engine, args.query, emb)
    for item, score in result.ranked_items[: engine.top_k]:
        print(f"{item}\t{score:.6f}")
    print(f"# stage1 {result.stage1_time * 1e3:.2f} ms, stage2 {result.stage2_time * 1e3:.2f} ms",
          file=sys.stderr)


def cmd_eval(args, config):
    engine = _make_engine(args, config)
    queries = load_queries(args.queries)
    embs = _load_query_embs(args.query_embs) if args.query_embs else {}
    results, truth = {}, {}
    for idx, rec in enumerate(queries):
        qid = str(idx)
        truth[qid] = rec.item_id
        results[qid] = pipeline.retrieve(engine, rec.text, embs.get(qid))
    report = pipeline.eval_recall(results, truth)
    print(pipeline.format_report(report))
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump({
                "recall_at": {str(k): v for k, v in report.recall_at.items()},
                "r_sum": report.r_sum,
                "mean_stage1_ms": report.mean_stage1_ms,
                "mean_stage2_ms": report.mean_stage2_ms,
                "mean_total_ms": report.mean_total_ms,
                "mean_candidates": report.mean_candidates,
                "n_queries": report.n_queries,
            }, fh, indent=2)
    if args.sweep:
        corpus = engine.corpus
        qembs = np.stack([
            embs.get(str(i), np.zeros(corpus.dim, np.float32)) for i in range(len(queries))
        ])
        rows = pipeline.sweep_parameters(
            corpus, engine.tree, lambda m: engine.model, engine.vocab,
            queries, qembs, truth, [str(i) for i in range(len(queries))],
            ms=tuple(args.sweep_m), top_ks=tuple(range(1, 16)),
        )
        print(pipeline.format_sweep(rows))


def cmd_bench_scaling(args, config):
    from .bench import build_scaling_fixture

    seed = _setting(args, config, "seed")
    fixture = build_scaling_fixture(sizes=tuple(args.sizes), dim=args.dim,
                                    n_queries=args.n_queries, seed=seed)
    rows = pipeline.bench_scaling(fixture.engines, fixture.queries)
    print(pipeline.format_scaling(rows))


def cmd_insert(args, config):
    tree = _load_tree(args.tree)
    m = _setting(args, config, "m")
    additions = load_corpus(args.corpus, format=_setting(args, config, "format"))
    for rec in additions.records:
        semid = insert_item(tree, make_record(rec.item_id, rep=rec.rep), m)
        print(f"{rec.item_id}\t{semid.render()}")
    _save_tree(tree, args.out or args.tree)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semindex",
                                     description="generative semantic index engine")
    parser.add_argument("--config", help="JSON config file with default settings")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, help="generate a synthetic corpus + queries")
    p.add_argument("--clusters", type=int, default=16)
    p.add_argument("--items-per-cluster", type=int, default=40)
    p.add_argument("--queries-per-item", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-queries", required=True)
    p.add_argument("--out-query-embs")

    p = add("build-tree", cmd_build_tree, help="cluster a corpus into a semantic tree")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["binary", "lines"])
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("assign-ids", cmd_assign_ids, help="print item identifiers")
    p.add_argument("--tree", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--items", nargs="*")

    p = add("train", cmd_train, help="train the identifier generator")
    p.add_argument("--tree", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--sources", choices=["original", "expansion", "all"], default="all",
                   help="query-source filter (expansion ablation)")
    p.add_argument("--m", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--adaptor-hidden", dest="adaptor_hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("decode", cmd_decode, help="generate identifiers for one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--topk", dest="top_k", type=int)
    p.add_argument("--beam-width", dest="beam_width", type=int)
    p.add_argument("--query", required=True)

    p = add("retrieve", cmd_retrieve, help="two-stage retrieval for one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["binary", "lines"])
    p.add_argument("--m", type=int)
    p.add_argument("--topk", dest="top_k", type=int)
    p.add_argument("--query", required=True)
    p.add_argument("--query-embs", help="query embedding file (JSON lines)")
    p.add_argument("--query-id", help="key into the query embedding file")

    p = add("eval", cmd_eval, help="recall + latency report over a query file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["binary", "lines"])
    p.add_argument("--queries", required=True)
    p.add_argument("--query-embs")
    p.add_argument("--m", type=int)
    p.add_argument("--topk", dest="top_k", type=int)
    p.add_argument("--json-out")
    p.add_argument("--sweep", action="store_true",
                   help="also sweep truncation length and top-k")
    p.add_argument("--sweep-m", type=int, nargs="*", default=[0, 1, 2])

    p = add("bench-scaling", cmd_bench_scaling, help="constant-vs-linear latency benchmark")
    p.add_argument("--sizes", type=int, nargs="+", default=[1000, 3000, 5000, 10000])
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--seed", type=int)

    p = add("insert", cmd_insert, help="insert new items into an existing tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--corpus", required=True, help="corpus file with the new items")
    p.add_argument("--format", choices=["binary", "lines"])
    p.add_argument("--m", type=int)
    p.add_argument("--out", help="output tree path (defaults to in-place)")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    config = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    args.fn(args, config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
