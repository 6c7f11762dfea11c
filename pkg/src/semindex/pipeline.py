"""Two-stage retrieval: generative pre-select, then per-candidate reranking.

Stage 1 generates top identifiers with the sequence model (cost independent
of corpus size); stage 2 scores only the pre-selected candidates against the
query embedding. The reranker is a pluggable per-pair scorer so any black-box
query/item similarity model can slot in; the shipped one is cosine over the
ingested unit embeddings.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .decode import DecodingTrie, beam_search
from .embeddings import EmbeddingCorpus
from .errors import DimMismatch, MissingGroundTruth, StateMismatch
from .seq2seq.model import PawaModel
from .textdata import Vocab, tokenize
from .tree import SemId, SemTree


class CosineReranker:
    """Dot product on unit vectors, scored one candidate at a time.

    Per-pair scoring mirrors how an external neural ranker would be called,
    which is what makes the brute-force baseline scale linearly.
    """

    def score(self, query_emb: np.ndarray, item_emb: np.ndarray) -> float:
        return float(np.dot(query_emb, item_emb))


@dataclass
class CandidateSet:
    semids: list[tuple[SemId, float]]
    items: list[str]  # rank-major over identifier groups, deduplicated


@dataclass
class RetrievalResult:
    ranked_items: list[tuple[str, float]]
    stage1_time: float = 0.0
    stage2_time: float = 0.0


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    r_sum: float
    mean_stage1_ms: float
    mean_stage2_ms: float
    mean_total_ms: float
    mean_candidates: float
    n_queries: int


@dataclass
class Engine:
    """Immutable serving state; concurrent retrieve calls are safe."""

    corpus: EmbeddingCorpus
    tree: SemTree
    trie: DecodingTrie
    model: PawaModel
    vocab: Vocab
    m: int
    top_k: int = 11
    beam_width: int | None = None  # defaults to 2 * top_k
    reranker: CosineReranker = field(default_factory=CosineReranker)

    def __post_init__(self):
        if self.beam_width is None:
            self.beam_width = 2 * self.top_k
        if self.trie.m != self.m:
            raise StateMismatch(f"trie built at m={self.trie.m}, engine at m={self.m}")
        if self.trie.tree_hash != self.tree.structure_hash():
            raise StateMismatch("trie was built from a different tree")
        self._groups = self.tree.semid_groups(self.m)

    def refresh_groups(self) -> None:
        """Re-read item groups after insertions (tree structure unchanged)."""
        if self.trie.tree_hash != self.tree.structure_hash():
            raise StateMismatch("tree structure changed; rebuild the trie")
        self._groups = self.tree.semid_groups(self.m)


def preselect(engine: Engine, query_tokens, top_k: int | None = None) -> CandidateSet:
    """Stage 1: beam-search identifiers, expand to their item groups."""
    top_k = engine.top_k if top_k is None else top_k
    beam = max(engine.beam_width, top_k)
    ranking = beam_search(engine.model, query_tokens, engine.trie, beam, top_k)
    items: list[str] = []
    seen = set()
    for semid, _ in ranking:
        for item in engine._groups.get(semid.tokens, ()):
            if item not in seen:
                seen.add(item)
                items.append(item)
    return CandidateSet(semids=ranking, items=items)


def rerank(query_embedding: np.ndarray, candidates: CandidateSet, corpus: EmbeddingCorpus,
           reranker: CosineReranker | None = None) -> RetrievalResult:
    """Stage 2: score each candidate, sort descending, ties by item_id."""
    query_embedding = np.asarray(query_embedding)
    if query_embedding.shape != (corpus.dim,):
        raise DimMismatch(f"query dim {query_embedding.shape} != corpus dim {corpus.dim}")
    reranker = reranker or CosineReranker()
    scored = [(item, reranker.score(query_embedding, corpus[item].rep)) for item in candidates.items]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return RetrievalResult(ranked_items=scored)


def retrieve(engine: Engine, query_text: str, query_embedding: np.ndarray | None,
             top_k: int | None = None) -> RetrievalResult:
    """Full two-stage retrieval with per-stage wall timings (I/O excluded).

    With no query embedding, stage 2 is skipped and candidates keep their
    deterministic pre-select order.
    """
    t0 = time.perf_counter()
    tokens = tokenize(query_text, engine.vocab, engine.model.cfg.max_query_len)
    candidates = preselect(engine, tokens, top_k)
    t1 = time.perf_counter()
    if query_embedding is None:
        result = RetrievalResult(ranked_items=[(item, 0.0) for item in candidates.items])
    else:
        result = rerank(query_embedding, candidates, engine.corpus, engine.reranker)
    t2 = time.perf_counter()
    result.stage1_time = t1 - t0
    result.stage2_time = t2 - t1
    return result


def brute_force_rank(query_embedding: np.ndarray, corpus: EmbeddingCorpus,
                     reranker: CosineReranker | None = None) -> RetrievalResult:
    """One-to-all baseline: score the entire corpus and sort."""
    everything = CandidateSet(semids=[], items=corpus.item_ids())
    t0 = time.perf_counter()
    result = rerank(query_embedding, everything, corpus, reranker)
    result.stage2_time = time.perf_counter() - t0
    return result


# --- evaluation ---

def eval_recall(results: dict[str, RetrievalResult], ground_truth: dict[str, str],
                ks=(1, 5, 10)) -> EvalReport:
    """R@K percentages plus latency and candidate-size statistics."""
    if not results:
        raise MissingGroundTruth("no results to evaluate")
    hits = {k: 0 for k in ks}
    s1, s2, ncand = [], [], []
    for qid, result in results.items():
        if qid not in ground_truth:
            raise MissingGroundTruth(qid)
        truth = ground_truth[qid]
        ranked = [item for item, _ in result.ranked_items]
        for k in ks:
            if truth in ranked[:k]:
                hits[k] += 1
        s1.append(result.stage1_time)
        s2.append(result.stage2_time)
        ncand.append(len(ranked))
    n = len(results)
    recall = {k: 100.0 * hits[k] / n for k in ks}
    return EvalReport(
        recall_at=recall,
        r_sum=sum(recall.values()),
        mean_stage1_ms=1e3 * float(np.mean(s1)),
        mean_stage2_ms=1e3 * float(np.mean(s2)),
        mean_total_ms=1e3 * float(np.mean(s1) + np.mean(s2)),
        mean_candidates=float(np.mean(ncand)),
        n_queries=n,
    )


def format_report(report: EvalReport) -> str:
    ks = sorted(report.recall_at)
    header = "".join(f"R@{k:<6}" for k in ks) + "R@sum"
    row = "".join(f"{report.recall_at[k]:<8.1f}" for k in ks) + f"{report.r_sum:.1f}"
    lines = [
        header,
        row,
        f"queries: {report.n_queries}  mean candidates: {report.mean_candidates:.1f}",
        f"latency ms (stage1/stage2/total): "
        f"{report.mean_stage1_ms:.2f} / {report.mean_stage2_ms:.2f} / {report.mean_total_ms:.2f}",
    ]
    return "\n".join(lines)


# --- latency scaling benchmark ---

@dataclass
class ScalingRow:
    corpus_size: int
    stage1_ms: float
    stage2_ms: float
    two_stage_ms: float
    brute_force_ms: float


def bench_scaling(engines: dict[int, Engine], queries: list[tuple[str, np.ndarray]],
                  warmup: int = 3) -> list[ScalingRow]:
    """Per-query mean latencies across corpus sizes, one query at a time.

    ``engines`` maps corpus size to a served engine; all engines must share
    one tree/trie shape so stage-1 cost is structurally identical. Queries are
    (text, embedding) pairs, processed sequentially, warm cache.
    """
    rows = []
    for size in sorted(engines):
        engine = engines[size]
        for text, emb in queries[:warmup]:
            retrieve(engine, text, emb)
            brute_force_rank(emb, engine.corpus, engine.reranker)
        s1 = s2 = bf = 0.0
        for text, emb in queries:
            result = retrieve(engine, text, emb)
            s1 += result.stage1_time
            s2 += result.stage2_time
            t0 = time.perf_counter()
            brute_force_rank(emb, engine.corpus, engine.reranker)
            bf += time.perf_counter() - t0
        n = len(queries)
        rows.append(ScalingRow(
            corpus_size=size,
            stage1_ms=1e3 * s1 / n,
            stage2_ms=1e3 * s2 / n,
            two_stage_ms=1e3 * (s1 + s2) / n,
            brute_force_ms=1e3 * bf / n,
        ))
    return rows


def format_scaling(rows: list[ScalingRow]) -> str:
    lines = [f"{'size':>8} {'stage1_ms':>10} {'stage2_ms':>10} {'two_stage_ms':>13} {'brute_ms':>10}"]
    for r in rows:
        lines.append(f"{r.corpus_size:>8} {r.stage1_ms:>10.3f} {r.stage2_ms:>10.3f} "
                     f"{r.two_stage_ms:>13.3f} {r.brute_force_ms:>10.3f}")
    return "\n".join(lines)


# --- parameter sweep (truncation length x top-k) ---

@dataclass
class SweepRow:
    m: int
    top_k: int
    recall_at_1: float
    recall_at_10: float
    mean_candidates: float


def sweep_parameters(
    corpus: EmbeddingCorpus,
    tree: SemTree,
    model_for_m,
    vocab: Vocab,
    queries,
    query_embeddings: np.ndarray,
    ground_truth: dict[str, str],
    query_ids: list[str],
    ms=(0, 1, 2),
    top_ks=tuple(range(1, 16)),
) -> list[SweepRow]:
    """Recall/candidate-size table over truncation lengths and top-k values.

    ``model_for_m`` maps a truncation length to the model used at that
    granularity (one model may serve all of them).
    """
    from .decode import build_trie

    out = []
    for m in ms:
        trie = build_trie(tree, m)
        model = model_for_m(m)
        engine = Engine(corpus=corpus, tree=tree, trie=trie, model=model, vocab=vocab,
                        m=m, top_k=max(top_ks))
        for top_k in top_ks:
            results = {}
            for qid, rec, emb in zip(query_ids, queries, query_embeddings):
                results[qid] = retrieve(engine, rec.text, emb, top_k=top_k)
            report = eval_recall(results, ground_truth)
            out.append(SweepRow(
                m=m,
                top_k=top_k,
                recall_at_1=report.recall_at[1],
                recall_at_10=report.recall_at[10],
                mean_candidates=report.mean_candidates,
            ))
    return out


def format_sweep(rows: list[SweepRow]) -> str:
    lines = [f"{'m':>3} {'top_k':>6} {'R@1':>7} {'R@10':>7} {'candidates':>11}"]
    for r in rows:
        lines.append(f"{r.m:>3} {r.top_k:>6} {r.recall_at_1:>7.1f} {r.recall_at_10:>7.1f} "
                     f"{r.mean_candidates:>11.1f}")
    return "\n".join(lines)
