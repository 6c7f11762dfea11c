"""Shared fixtures and independent oracle helpers for the test suite."""
import numpy as np
import pytest

import semindex as si
from semindex.seq2seq import ModelConfig
from semindex.seq2seq.model import PawaModel


def random_unit_rows(rng, n, dim):
    mat = rng.normal(size=(n, dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return mat


def make_corpus(rng, n, dim, prefix="it"):
    rows = random_unit_rows(rng, n, dim)
    records = [si.make_record(f"{prefix}{i:05d}", rep=rows[i]) for i in range(n)]
    return si.EmbeddingCorpus(dim=dim, records=records)


def micro_model(k=3, vocab_size=20, hidden=8, max_semid_len=3, seed=0, dropout=0.0,
                adaptor_hidden=4, max_query_len=8, enc_layers=1, heads=2):
    cfg = ModelConfig(vocab_size=vocab_size, k=k, max_semid_len=max_semid_len,
                      hidden=hidden, enc_layers=enc_layers, heads=heads,
                      max_query_len=max_query_len, dropout=dropout,
                      adaptor_hidden=adaptor_hidden)
    return PawaModel.init(cfg, seed=seed)


def fd_gradcheck(model, batch, h=1e-4, floor=1e-6):
    """Central finite differences against the analytic gradients.

    Returns the worst relative error across every parameter entry, with the
    relative-error denominator floored so truncation noise on near-zero
    gradients does not dominate.
    """
    grads = model.gradients(batch)
    worst = 0.0
    for key in sorted(model.params):
        param = model.params[key]
        flat = param.reshape(-1)
        gflat = grads[key].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = model.batch_loss(batch)
            flat[idx] = orig - h
            down = model.batch_loss(batch)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[idx]), floor)
            worst = max(worst, abs(fd - gflat[idx]) / denom)
    return worst


def all_terminal_semids(trie):
    """Terminal trie paths, via the trie's own walk (cross-checked in tests)."""
    return trie.paths()


def enumerate_sequence_scores(model, query_tokens, paths):
    """Exhaustive oracle: raw log probability of each END-terminated path."""
    end = model.cfg.end_id
    return {p: model.sequence_logprob(query_tokens, list(p) + [end]) for p in paths}


@pytest.fixture(scope="session")
def small_synth():
    """One shared tiny synthetic world: 4 clusters x 8 items, 3 queries each."""
    corpus, queries, truth = si.synth_corpus(g=4, n_per=8, q_per=3, dim=16, seed=11)
    tree = si.build_tree(corpus, k=4, c=10, seed=3)
    vocab = si.build_vocab(q.text for q in queries)
    return corpus, queries, truth, tree, vocab


@pytest.fixture(scope="session")
def deep_synth():
    """A deeper tree (small capacity) for truncation and sweep tests."""
    corpus, queries, truth = si.synth_corpus(g=6, n_per=20, q_per=2, dim=16, seed=21)
    tree = si.build_tree(corpus, k=3, c=6, seed=9)
    vocab = si.build_vocab(q.text for q in queries)
    return corpus, queries, truth, tree, vocab
