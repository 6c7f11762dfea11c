"""Query text handling: tokenization, query files, training pairs, synthetic data.

The tokenizer is word-level (lowercase, split at whitespace/punctuation). The
engine trains from scratch at desk scale, so subword machinery buys nothing.
Vocab ids 0 and 1 are reserved for padding and unknown words.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingCorpus, make_record, normalize
from .errors import InfeasibleSeparation, NoValidPairs, ParseError, UnknownItem
from .tree import SemId, SemTree, assign_semid

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_QUERY_LEN = 64

_WORD_RE = re.compile(r"\w+", re.UNICODE)

QUERY_SOURCES = ("original", "expansion")


@dataclass(frozen=True)
class QueryRecord:
    item_id: str
    text: str
    source: str = "original"

    def __post_init__(self):
        if not self.text.strip():
            raise ParseError(f"query for {self.item_id!r} is empty")
        if self.source not in QUERY_SOURCES:
            raise ParseError(f"unknown query source {self.source!r}")


@dataclass
class Vocab:
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.token_to_id) + 2  # reserved pad/unk

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def word_split(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def build_vocab(texts, min_freq: int = 1) -> Vocab:
    counts: dict[str, int] = {}
    for text in texts:
        for word in word_split(text):
            counts[word] = counts.get(word, 0) + 1
    kept = sorted(w for w, n in counts.items() if n >= min_freq)
    return Vocab({w: i + 2 for i, w in enumerate(kept)})


def tokenize(text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_QUERY_LEN) -> list[int]:
    return [vocab.lookup(w) for w in word_split(text)[:max_len]]


# --- query files (one JSON object per line) ---

def load_queries(path) -> list[QueryRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(QueryRecord(
                    item_id=str(obj["item_id"]),
                    text=str(obj["text"]),
                    source=str(obj.get("source", "original")),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"line {line_no}: {exc}", line_no) from exc
            except ParseError as exc:
                raise ParseError(f"line {line_no}: {exc}", line_no) from exc
    return records


def save_queries(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"item_id": rec.item_id, "text": rec.text, "source": rec.source}) + "\n")


# --- training pairs ---

@dataclass(frozen=True)
class TrainingPair:
    query_tokens: tuple[int, ...]
    target: SemId


def build_training_pairs(
    tree: SemTree,
    queries,
    vocab: Vocab,
    m: int = 0,
    max_query_len: int = DEFAULT_MAX_QUERY_LEN,
) -> list[TrainingPair]:
    """Bind each query to its item's truncated identifier.

    Queries whose item is not indexed are skipped (the held-out split is not
    visible at training time); the skip count is logged.
    """
    pairs = []
    skipped = 0
    for rec in queries:
        if rec.item_id not in tree.leaf_of:
            skipped += 1
            continue
        pairs.append(TrainingPair(
            query_tokens=tuple(tokenize(rec.text, vocab, max_query_len)),
            target=assign_semid(tree, rec.item_id, m),
        ))
    if skipped:
        log.warning("skipped %d queries referencing unindexed items", skipped)
    if not pairs:
        raise NoValidPairs("no query matched an indexed item")
    return pairs


# --- synthetic desk-scale corpus ---

_TEMPLATES = (
    "a video about {c} showing {i}",
    "find the clip of {i} from the {c} collection",
    "footage of {i} in a {c} scene",
    "{c} content where {i} appears",
    "show me {i} during a {c} session",
    "someone filmed {i} at the {c} event",
    "short {c} recording featuring {i}",
    "the {i} moment from {c} highlights",
    "watch {i} with a {c} background",
    "a clip tagged {c} starring {i}",
    "look for {i} inside {c} videos",
    "scenes of {i} across the {c} archive",
    "the famous {c} take with {i}",
    "compilation of {i} for {c} fans",
    "{i} caught on camera at {c} time",
    "raw {c} material centered on {i}",
)


def cluster_keyword(cluster: int) -> str:
    return f"theme{cluster:02d}"


def item_keyword(cluster: int, index: int) -> str:
    return f"subject{cluster:02d}x{index:03d}"


def synth_corpus(
    g: int,
    n_per: int,
    q_per: int,
    dim: int,
    seed: int,
) -> tuple[EmbeddingCorpus, list[QueryRecord], dict[str, str]]:
    """Generate ``g`` well-separated unit clusters with templated queries.

    Cluster mean directions are mutually >= 60 degrees apart; items add
    per-coordinate Gaussian noise (sigma 0.05) before normalization. Queries
    embed a cluster keyword and an item keyword so a text model can recover
    the cluster. Returns (corpus, queries, ground truth query_id -> item_id).
    Fully deterministic under ``seed``.
    """
    if g < 1 or n_per < 1 or q_per < 1 or dim < 2:
        raise InfeasibleSeparation("all counts must be >= 1 and dim >= 2")
    rng = np.random.default_rng(seed)
    centers = _separated_directions(g, dim, rng)

    records = []
    queries = []
    truth = {}
    for ci in range(g):
        for ii in range(n_per):
            item_id = f"item_{cluster_keyword(ci)}_{ii:03d}"
            vec = centers[ci] + rng.normal(0.0, 0.05, size=dim)
            records.append(make_record(item_id, rep=normalize(vec)))
            for qi in range(q_per):
                template = _TEMPLATES[qi % len(_TEMPLATES)]
                text = template.format(c=cluster_keyword(ci), i=item_keyword(ci, ii))
                source = "original" if qi == 0 else "expansion"
                queries.append(QueryRecord(item_id=item_id, text=text, source=source))
                truth[query_id(item_id, qi)] = item_id
    return EmbeddingCorpus(dim=dim, records=records), queries, truth


def query_id(item_id: str, index: int) -> str:
    return f"{item_id}#q{index}"


def _separated_directions(g: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample unit directions with pairwise cosine <= 0.5 (>= 60 deg)."""
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < g:
        attempts += 1
        if attempts > 200 * g:
            raise InfeasibleSeparation(f"cannot place {g} directions >=60 deg apart in dim {dim}")
        cand = rng.normal(size=dim)
        cand /= np.linalg.norm(cand)
        if all(float(cand @ c) <= 0.5 for c in centers):
            centers.append(cand)
    return np.stack(centers)


def synth_query_embeddings(
    queries,
    corpus: EmbeddingCorpus,
    noise: float = 0.05,
    seed: int = 0,
) -> np.ndarray:
    """Unit query embeddings near each query's ground-truth item rep.

    Stand-in for an upstream text encoder; used by the reranking stage.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((len(queries), corpus.dim), dtype=np.float32)
    for i, rec in enumerate(queries):
        if rec.item_id not in corpus:
            raise UnknownItem(rec.item_id)
        base = corpus[rec.item_id].rep.astype(np.float64)
        out[i] = normalize(base + rng.normal(0.0, noise, size=corpus.dim))
    return out
