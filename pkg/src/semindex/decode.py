"""Trie over valid truncated identifiers and constrained beam search.

The trie admits exactly the identifiers that name at least one indexed item,
so any sequence the beam emits resolves to a real item group regardless of
model parameters. Search cost depends on the trie shape and beam width only,
never on corpus size.
"""
from __future__ import annotations

from dataclasses import dataclass, field


from .errors import EmptyTrie, TruncationTooDeep
from .seq2seq.model import PawaModel
from .tree import SemId, SemTree


@dataclass
class TrieNode:
    children: dict[int, "TrieNode"] = field(default_factory=dict)
    terminal: bool = False


@dataclass
class DecodingTrie:
    root: TrieNode
    m: int
    tree_hash: str
    max_depth: int  # longest path length in tokens, incl. the root symbol

    def n_terminals(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += node.terminal
            stack.extend(node.children.values())
        return count

    def paths(self) -> list[tuple[int, ...]]:
        """All terminal paths, lexicographically ordered."""
        out: list[tuple[int, ...]] = []

        def walk(node: TrieNode, path: tuple[int, ...]):
            if node.terminal:
                out.append(path)
            for label in sorted(node.children):
                walk(node.children[label], (*path, label))

        walk(self.root, (0,))
        return out


def build_trie(tree: SemTree, m: int = 0) -> DecodingTrie:
    """Index the set of truncated identifiers carrying at least one item."""
    groups = tree.semid_groups(m)  # raises TruncationTooDeep when m is infeasible
    if not groups:
        raise EmptyTrie("tree has no leaves")
    root = TrieNode()
    max_depth = 1
    for tokens in groups:
        node = root
        for tok in tokens[1:]:  # tokens[0] is the root symbol, the trie root itself
            node = node.children.setdefault(tok, TrieNode())
        node.terminal = True
        max_depth = max(max_depth, len(tokens))
    return DecodingTrie(root=root, m=m, tree_hash=tree.structure_hash(), max_depth=max_depth)


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]
    logprob: float
    trie_node: TrieNode


def beam_search(
    model: PawaModel,
    query_tokens,
    trie: DecodingTrie,
    beam_width: int,
    top_k: int,
) -> list[tuple[SemId, float]]:
    """Top identifiers by raw (length-unnormalized) log probability.

    Expansions are restricted to trie-allowed tokens; a hypothesis that takes
    END leaves the beam and enters the result pool. Ties break by token
    sequence, lexicographically.
    """
    if top_k < 1 or beam_width < top_k:
        raise ValueError("need beam_width >= top_k >= 1")
    if not (trie.root.children or trie.root.terminal):
        raise EmptyTrie("trie has no paths")
    end = model.cfg.end_id
    if trie.max_depth > model.cfg.n_positions:
        raise TruncationTooDeep(
            f"trie depth {trie.max_depth} exceeds model positions {model.cfg.n_positions}"
        )

    enc = model.encode(query_tokens)
    live = [BeamHypothesis(tokens=(0,), logprob=0.0, trie_node=trie.root)]
    finished: list[tuple[float, tuple[int, ...]]] = []
    position = 1
    while live:
        # one batched forward for all live hypotheses (they share the position)
        logps = model.step_logprobs_batch(enc, [hyp.tokens for hyp in live], position)
        candidates: list[BeamHypothesis] = []
        for hyp, logp in zip(live, logps):
            if hyp.trie_node.terminal:
                finished.append((hyp.logprob + float(logp[end]), (*hyp.tokens, end)))
            for label, child in hyp.trie_node.children.items():
                candidates.append(BeamHypothesis(
                    tokens=(*hyp.tokens, label),
                    logprob=hyp.logprob + float(logp[label]),
                    trie_node=child,
                ))
        candidates.sort(key=lambda h: (-h.logprob, h.tokens))
        live = candidates[:beam_width]
        position += 1

    finished.sort(key=lambda t: (-t[0], t[1]))
    return [(SemId(tokens[:-1]), score) for score, tokens in finished[:top_k]]
