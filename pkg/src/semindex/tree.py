"""Hierarchical semantic tree: recursive spherical k-means over unit embeddings.

Every item lands in exactly one leaf. An item's identifier is the sequence of
branch indices along the root-to-leaf path, prefixed with the root symbol 0,
optionally truncated by dropping the last ``m`` tokens. Identifiers render as
dash-joined integers, e.g. "0-9-21".
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingCorpus, ItemRecord, is_unit
from .errors import (
    CorruptTree,
    DuplicateItemId,
    EmptyInput,
    NonUnitInput,
    TruncationTooDeep,
    UnknownItem,
)

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-9  # convergence when max centroid movement (1 - cosine) drops below


@dataclass(frozen=True)
class SemId:
    """Branch-index path from the root; tokens[0] is always the root symbol 0."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) < 1 or self.tokens[0] != 0:
            raise ValueError(f"identifier must start with the root symbol 0: {self.tokens}")
        if any(t < 0 for t in self.tokens):
            raise ValueError(f"negative branch index in {self.tokens}")

    def render(self) -> str:
        return "-".join(str(t) for t in self.tokens)

    @classmethod
    def parse(cls, text: str) -> "SemId":
        return cls(tuple(int(t) for t in text.split("-")))

    def __len__(self):
        return len(self.tokens)


@dataclass
class SemTreeNode:
    node_id: int
    depth: int
    centroid: np.ndarray
    children: list[int] = field(default_factory=list)
    members: list[str] = field(default_factory=list)
    stagnated: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class SemTree:
    k: int
    c: int
    build_seed: int
    root: int
    nodes: dict[int, SemTreeNode]
    leaf_of: dict[str, int]

    # --- structure queries ---

    def leaves(self) -> list[SemTreeNode]:
        return [n for n in self.nodes.values() if n.is_leaf]

    def path_tokens(self, leaf_id: int) -> tuple[int, ...]:
        """Root symbol plus branch indices from root down to ``leaf_id``."""
        if leaf_id not in self._parent and leaf_id != self.root:
            raise UnknownItem(f"no node {leaf_id}")
        rev = []
        node_id = leaf_id
        while node_id != self.root:
            parent = self._parent[node_id]
            rev.append(self.nodes[parent].children.index(node_id))
            node_id = parent
        return (0, *reversed(rev))

    @property
    def _parent(self) -> dict[int, int]:
        cached = getattr(self, "_parent_cache", None)
        if cached is None:
            cached = {}
            for node in self.nodes.values():
                for child in node.children:
                    cached[child] = node.node_id
            object.__setattr__(self, "_parent_cache", cached)
        return cached

    def _invalidate_caches(self) -> None:
        for name in ("_parent_cache", "_hash_cache", "_shash_cache"):
            if hasattr(self, name):
                object.__delattr__(self, name)

    def max_depth(self) -> int:
        return max(n.depth for n in self.leaves())

    def min_leaf_depth(self) -> int:
        return min(n.depth for n in self.leaves())

    def semid_groups(self, m: int) -> dict[tuple[int, ...], list[str]]:
        """Map each truncated identifier to the items it covers."""
        groups: dict[tuple[int, ...], list[str]] = {}
        for leaf in self.leaves():
            tokens = truncate_tokens(self.path_tokens(leaf.node_id), m)
            groups.setdefault(tokens, []).extend(leaf.members)
        for members in groups.values():
            members.sort()
        return groups

    def content_hash(self) -> str:
        cached = getattr(self, "_hash_cache", None)
        if cached is None:
            cached = hashlib.sha256(serialize_tree(self)).hexdigest()
            object.__setattr__(self, "_hash_cache", cached)
        return cached

    def structure_hash(self) -> str:
        """Hash of the node topology only; invariant under member insertion."""
        cached = getattr(self, "_shash_cache", None)
        if cached is None:
            doc = json.dumps([
                (n.node_id, n.depth, n.children)
                for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
            ] + [self.root, self.k]).encode("utf-8")
            cached = hashlib.sha256(doc).hexdigest()
            object.__setattr__(self, "_shash_cache", cached)
        return cached

    def __eq__(self, other):
        if not isinstance(other, SemTree):
            return NotImplemented
        if (self.k, self.c, self.build_seed, self.root) != (other.k, other.c, other.build_seed, other.root):
            return False
        if self.leaf_of != other.leaf_of or set(self.nodes) != set(other.nodes):
            return False
        for nid, node in self.nodes.items():
            o = other.nodes[nid]
            if (node.depth, node.children, node.members, node.stagnated) != (o.depth, o.children, o.members, o.stagnated):
                return False
            if not np.array_equal(node.centroid, o.centroid):
                return False
        return True


def truncate_tokens(tokens: tuple[int, ...], m: int) -> tuple[int, ...]:
    if m < 0 or m >= len(tokens):
        raise TruncationTooDeep(f"cannot drop {m} tokens from a {len(tokens)}-token path")
    return tokens[: len(tokens) - m] if m else tokens


# --- spherical k-means ---

def _check_unit_rows(points: np.ndarray) -> None:
    norms = np.linalg.norm(points, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise NonUnitInput("points must be unit-normalized")


def _renorm_rows(mat: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    out = np.where(norms > 0, mat / np.maximum(norms, 1e-300), fallback)
    return out


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding under cosine distance (1 - dot on unit vectors)."""
    n = points.shape[0]
    first = int(rng.integers(n))
    centers = [points[first]]
    best = 1.0 - points @ centers[0]
    for _ in range(1, k):
        weights = np.maximum(best, 0.0) ** 2
        total = float(weights.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=weights / total))
        centers.append(points[idx])
        best = np.minimum(best, 1.0 - points @ centers[-1])
    return np.stack(centers)


def spherical_kmeans(points, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Cluster unit vectors by cosine similarity.

    Returns (assignments, centroids); assignments are argmax-cosine against the
    final unit centroids. Deterministic for a fixed (points order, k, seed).
    If there are fewer distinct points than k, only that many clusters emerge.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyInput("no points to cluster")
    if k < 1:
        raise EmptyInput(f"k must be >= 1, got {k}")
    _check_unit_rows(pts)

    n_distinct = np.unique(pts, axis=0).shape[0]
    k_eff = min(k, n_distinct)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**63 - 1)))

    if k_eff == 1:
        centroid = _renorm_rows(pts.mean(axis=0, keepdims=True), pts[:1])
        return np.zeros(pts.shape[0], dtype=np.int64), centroid

    centroids = _plusplus_init(pts, k_eff, rng)
    assign = np.argmax(pts @ centroids.T, axis=1)
    for _ in range(KMEANS_MAX_ITER):
        assign = _repair_empty(pts, centroids, assign, k_eff)
        new_centroids = np.empty_like(centroids)
        for j in range(k_eff):
            mask = assign == j
            mean = pts[mask].mean(axis=0)
            norm = np.linalg.norm(mean)
            new_centroids[j] = mean / norm if norm > 0 else centroids[j]
        movement = 1.0 - np.einsum("ij,ij->i", centroids, new_centroids)
        centroids = new_centroids
        new_assign = np.argmax(pts @ centroids.T, axis=1)
        converged = float(movement.max()) < KMEANS_TOL
        assign = new_assign
        if converged:
            break
    assign = _repair_empty(pts, centroids, assign, k_eff)
    return assign.astype(np.int64), centroids


def _repair_empty(pts, centroids, assign, k_eff):
    """Move the globally farthest point from its centroid into any empty cluster."""
    assign = assign.copy()
    for j in range(k_eff):
        if np.any(assign == j):
            continue
        sims = np.einsum("ij,ij->i", pts, centroids[assign])
        # ties broken by input order via argmin on similarity
        donor = int(np.argmin(sims))
        assign[donor] = j
    return assign


# --- hierarchical build ---

def _node_seed(build_seed: int, path: tuple[int, ...]) -> int:
    ss = np.random.SeedSequence(entropy=int(build_seed) & (2**63 - 1), spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


def build_tree(corpus: EmbeddingCorpus, k: int, c: int, seed: int) -> SemTree:
    """Recursively split any node holding more than ``c`` items into ``k`` clusters.

    Branch order is deterministic: children sorted by descending member count,
    ties by smallest member item_id. A split that leaves every member in one
    child freezes the node as an oversized leaf (stagnation flag), which
    guarantees termination on duplicate points.
    """
    if len(corpus) == 0:
        raise EmptyInput("corpus is empty")
    if k < 2:
        raise EmptyInput(f"branching factor must be >= 2, got {k}")
    if c < 1:
        raise EmptyInput(f"leaf capacity must be >= 1, got {c}")

    reps = corpus.rep_matrix().astype(np.float64)
    ids = corpus.item_ids()

    nodes: dict[int, SemTreeNode] = {}
    leaf_of: dict[str, int] = {}
    next_id = [0]

    def new_node(depth: int, centroid: np.ndarray) -> SemTreeNode:
        node = SemTreeNode(node_id=next_id[0], depth=depth, centroid=centroid)
        next_id[0] += 1
        nodes[node.node_id] = node
        return node

    def split(node: SemTreeNode, indices: np.ndarray, path: tuple[int, ...]) -> None:
        if indices.size <= c:
            node.members = [ids[i] for i in indices]
            for i in indices:
                leaf_of[ids[i]] = node.node_id
            return
        assign, _ = spherical_kmeans(reps[indices], k, _node_seed(seed, path))
        buckets = [indices[assign == j] for j in range(int(assign.max()) + 1)]
        buckets = [b for b in buckets if b.size]
        if len(buckets) <= 1:
            node.stagnated = True
            node.members = [ids[i] for i in indices]
            for i in indices:
                leaf_of[ids[i]] = node.node_id
            return
        buckets.sort(key=lambda b: (-b.size, min(ids[i] for i in b)))
        for branch, bucket in enumerate(buckets):
            mean = reps[bucket].mean(axis=0)
            norm = np.linalg.norm(mean)
            centroid = mean / norm if norm > 0 else reps[bucket[0]]
            child = new_node(node.depth + 1, centroid)
            node.children.append(child.node_id)
            split(child, bucket, (*path, branch))

    all_idx = np.arange(len(ids))
    root_mean = reps.mean(axis=0)
    root_norm = np.linalg.norm(root_mean)
    root_centroid = root_mean / root_norm if root_norm > 0 else reps[0]
    root = new_node(0, root_centroid)
    split(root, all_idx, ())

    return SemTree(k=k, c=c, build_seed=int(seed), root=root.node_id, nodes=nodes, leaf_of=leaf_of)


# --- identifiers ---

def assign_semid(tree: SemTree, item_id: str, m: int = 0) -> SemId:
    if item_id not in tree.leaf_of:
        raise UnknownItem(item_id)
    tokens = tree.path_tokens(tree.leaf_of[item_id])
    return SemId(truncate_tokens(tokens, m))


def insert_item(tree: SemTree, record: ItemRecord, m: int = 0) -> SemId:
    """Append an unseen item to the max-cosine leaf; centroids stay fixed."""
    if record.item_id in tree.leaf_of:
        raise DuplicateItemId(record.item_id)
    if not is_unit(record.rep):
        raise NonUnitInput(f"record {record.item_id!r}: rep is not unit-normalized")
    leaves = sorted(tree.leaves(), key=lambda n: n.node_id)
    cents = np.stack([n.centroid for n in leaves])
    sims = cents @ record.rep.astype(np.float64)
    best = leaves[int(np.argmax(sims))]  # argmax keeps the first (lowest node_id) on ties
    best.members.append(record.item_id)
    tree.leaf_of[record.item_id] = best.node_id
    tree._invalidate_caches()
    return SemId(truncate_tokens(tree.path_tokens(best.node_id), m))


# --- serialization ---

def serialize_tree(tree: SemTree) -> bytes:
    doc = {
        "version": 1,
        "k": tree.k,
        "c": tree.c,
        "build_seed": tree.build_seed,
        "root": tree.root,
        "nodes": [
            {
                "node_id": n.node_id,
                "depth": n.depth,
                "centroid": [float(v) for v in n.centroid],
                "children": list(n.children),
                "members": list(n.members),
                "stagnated": n.stagnated,
            }
            for n in sorted(tree.nodes.values(), key=lambda n: n.node_id)
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize_tree(data: bytes) -> SemTree:
    try:
        doc = json.loads(data.decode("utf-8"))
        if doc["version"] != 1:
            raise CorruptTree(f"unsupported tree version {doc['version']}")
        nodes = {}
        for obj in doc["nodes"]:
            nodes[int(obj["node_id"])] = SemTreeNode(
                node_id=int(obj["node_id"]),
                depth=int(obj["depth"]),
                centroid=np.asarray(obj["centroid"], dtype=np.float64),
                children=[int(x) for x in obj["children"]],
                members=[str(x) for x in obj["members"]],
                stagnated=bool(obj["stagnated"]),
            )
        tree = SemTree(
            k=int(doc["k"]),
            c=int(doc["c"]),
            build_seed=int(doc["build_seed"]),
            root=int(doc["root"]),
            nodes=nodes,
            leaf_of={},
        )
        for node in tree.nodes.values():
            if node.is_leaf != bool(node.members):
                raise CorruptTree(f"node {node.node_id}: leaf/members inconsistency")
            for item in node.members:
                tree.leaf_of[item] = node.node_id
        if tree.root not in tree.nodes:
            raise CorruptTree("missing root node")
        return tree
    except CorruptTree:
        raise
    except (KeyError, ValueError, TypeError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptTree(str(exc)) from exc
