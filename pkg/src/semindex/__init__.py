"""semindex: generative semantic index engine for text-to-item retrieval.

Items arrive as embeddings, get organized into a hierarchical cluster tree,
and receive short path identifiers. A from-scratch sequence model learns to
generate identifiers from query text; retrieval runs in two stages: a
constant-cost generative pre-select followed by similarity reranking over the
small candidate set.
"""
from . import errors
from .decode import DecodingTrie, beam_search, build_trie
from .embeddings import (
    EmbeddingCorpus,
    ItemRecord,
    load_corpus,
    make_record,
    normalize,
    pool_frames,
    save_corpus,
)
from .pipeline import (
    CandidateSet,
    CosineReranker,
    Engine,
    EvalReport,
    RetrievalResult,
    bench_scaling,
    brute_force_rank,
    eval_recall,
    preselect,
    rerank,
    retrieve,
    sweep_parameters,
)
from .seq2seq import ModelConfig, PawaModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .textdata import (
    QueryRecord,
    TrainingPair,
    Vocab,
    build_training_pairs,
    build_vocab,
    load_queries,
    save_queries,
    synth_corpus,
    synth_query_embeddings,
    tokenize,
)
from .tree import (
    SemId,
    SemTree,
    assign_semid,
    build_tree,
    deserialize_tree,
    insert_item,
    serialize_tree,
    spherical_kmeans,
)

__version__ = "0.1.0"
