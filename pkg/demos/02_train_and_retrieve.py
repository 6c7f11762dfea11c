"""Train the query-to-identifier model and run two-stage retrieval.

Small end-to-end pass: index a synthetic corpus, train the seq2seq model to
map query text to path identifiers, then answer queries in two stages --
beam-search a handful of identifier groups, rerank their members by cosine.
Takes roughly half a minute.
"""
import semindex as si
from semindex import pipeline
from semindex.seq2seq import ModelConfig, TrainConfig


def main():
    corpus, queries, truth = si.synth_corpus(g=4, n_per=8, q_per=6, dim=16, seed=11)
    tree = si.build_tree(corpus, k=4, c=10, seed=3)
    vocab = si.build_vocab(q.text for q in queries)
    pairs = si.build_training_pairs(tree, queries, vocab, m=0)
    print(f"{len(corpus.records)} items, {len(pairs)} training pairs, "
          f"{len(vocab)} vocabulary entries")

    cfg = ModelConfig(vocab_size=len(vocab), k=tree.k,
                      max_semid_len=tree.max_depth() + 2,
                      hidden=32, enc_layers=1, heads=4, max_query_len=16,
                      dropout=0.0, adaptor_hidden=16)
    model, history = si.train(pairs, cfg, TrainConfig(epochs=60, seed=0))
    print(f"training loss: {history[0]:.3f} -> {history[-1]:.4f}")

    # Stage 1 alone: the model decodes identifiers under the tree's trie, so
    # every output names a real leaf.
    trie = si.build_trie(tree, 0)
    q = queries[0]
    tokens = si.tokenize(q.text, vocab, max_len=cfg.max_query_len)
    print(f"\nquery: {q.text!r}")
    for semid, logprob in si.beam_search(model, tokens, trie, beam_width=4, top_k=3):
        print(f"  {semid.render():<12} logprob {logprob:8.3f}  "
              f"({len(tree.semid_groups(0)[semid.tokens])} items)")

    # Full engine: preselect identifier groups, then rerank members by cosine.
    engine = pipeline.Engine(corpus=corpus, tree=tree, trie=trie, model=model,
                             vocab=vocab, m=0, top_k=3)
    emb = si.synth_query_embeddings([q], corpus, seed=0)[0]
    result = pipeline.retrieve(engine, q.text, emb)
    print(f"\ntop hits (truth: {q.item_id}):")
    for item, score in result.ranked_items[:5]:
        print(f"  {item:<22} cosine {score:.4f}")

    # Recall over every query, against the known query -> item ground truth.
    qids = sorted(truth)
    embs = {qid: e for qid, e in zip(qids, si.synth_query_embeddings(
        [_lookup(queries, qid) for qid in qids], corpus, seed=1))}
    results = {qid: pipeline.retrieve(engine, _lookup(queries, qid).text, embs[qid])
               for qid in qids}
    report = pipeline.eval_recall(results, truth)
    print("\n" + pipeline.format_report(report))


def _lookup(queries, qid):
    item_id, _, idx = qid.partition("#q")
    matches = [q for q in queries if q.item_id == item_id]
    return matches[int(idx)]


if __name__ == "__main__":
    main()
