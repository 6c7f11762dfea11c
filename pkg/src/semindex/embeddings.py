"""Item/frame embedding ingestion, pooling, and corpus persistence.

Embeddings are plain 1-D float32 numpy arrays. Item representations are
unit-normalized at ingestion so cosine similarity downstream reduces to a
dot product.

Binary corpus layout (little-endian):
    magic "SGIX" | version u16 = 1 | dim u32 | record count u64
    per record:
        id length u16 | id bytes (UTF-8) | frame count u32
        frame_count * dim f32 (frames) | dim f32 (normalized rep)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateItemId,
    EmptyFrameList,
    IoFailure,
    NonFiniteValue,
    NonUnitInput,
    ParseError,
    TruncatedFile,
)

MAGIC = b"SGIX"
FORMAT_VERSION = 1
UNIT_TOL = 1e-5


def as_embedding(values) -> np.ndarray:
    """Coerce to a finite 1-D float32 vector."""
    vec = np.asarray(values, dtype=np.float32)
    if vec.ndim != 1 or vec.size == 0:
        raise DimMismatch(f"expected a nonempty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteValue("embedding contains NaN or Inf")
    return vec


def normalize(vec: np.ndarray) -> np.ndarray:
    """L2-normalize; a zero vector is a hard error, never silently passed on."""
    vec = as_embedding(vec)
    norm = float(np.linalg.norm(vec.astype(np.float64)))
    if norm == 0.0:
        raise NonUnitInput("cannot normalize a zero vector")
    return (vec.astype(np.float64) / norm).astype(np.float32)


def is_unit(vec: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return abs(float(np.linalg.norm(vec.astype(np.float64))) - 1.0) <= tol


def pool_frames(frames) -> np.ndarray:
    """Mean-pool per-frame vectors into a single unit item representation."""
    if frames is None or len(frames) == 0:
        raise EmptyFrameList("no frames to pool")
    mats = [as_embedding(f) for f in frames]
    dim = mats[0].size
    for f in mats[1:]:
        if f.size != dim:
            raise DimMismatch(f"frame dims differ: {f.size} vs {dim}")
    mean = np.mean(np.stack(mats).astype(np.float64), axis=0)
    return normalize(mean)


@dataclass
class ItemRecord:
    """One indexed item: optional raw frame vectors plus the pooled unit rep."""

    item_id: str
    rep: np.ndarray
    frames: list[np.ndarray] | None = None

    def validate(self, dim: int) -> None:
        if not self.item_id:
            raise ParseError("empty item_id")
        rep = as_embedding(self.rep)
        if rep.size != dim:
            raise DimMismatch(f"record {self.item_id!r}: rep dim {rep.size} != corpus dim {dim}")
        if not is_unit(rep):
            raise NonUnitInput(f"record {self.item_id!r}: rep is not unit-normalized")
        if self.frames is not None:
            for f in self.frames:
                if as_embedding(f).size != dim:
                    raise DimMismatch(f"record {self.item_id!r}: frame dim mismatch")

    def __eq__(self, other):
        if not isinstance(other, ItemRecord):
            return NotImplemented
        if self.item_id != other.item_id:
            return False
        if not np.array_equal(self.rep, other.rep):
            return False
        mine = self.frames or []
        theirs = other.frames or []
        if len(mine) != len(theirs):
            return False
        return all(np.array_equal(a, b) for a, b in zip(mine, theirs))


@dataclass
class EmbeddingCorpus:
    """Immutable-after-load collection of item records sharing one dim."""

    dim: int
    records: list[ItemRecord] = field(default_factory=list)

    def __post_init__(self):
        self._index = {}
        for rec in self.records:
            if rec.item_id in self._index:
                raise DuplicateItemId(rec.item_id)
            self._index[rec.item_id] = rec

    def validate(self) -> None:
        if self.dim <= 0:
            raise DimMismatch(f"nonpositive dim {self.dim}")
        seen = set()
        for rec in self.records:
            if rec.item_id in seen:
                raise DuplicateItemId(rec.item_id)
            seen.add(rec.item_id)
            rec.validate(self.dim)

    def __len__(self):
        return len(self.records)

    def __contains__(self, item_id):
        return item_id in self._index

    def __getitem__(self, item_id) -> ItemRecord:
        return self._index[item_id]

    def item_ids(self) -> list[str]:
        return [r.item_id for r in self.records]

    def rep_matrix(self) -> np.ndarray:
        """(n, dim) float32 matrix of item reps, in record order."""
        return np.stack([r.rep for r in self.records]) if self.records else np.zeros((0, self.dim), np.float32)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingCorpus):
            return NotImplemented
        return self.dim == other.dim and self.records == other.records


def make_record(item_id: str, frames=None, rep=None) -> ItemRecord:
    """Build a record, pooling frames into a rep when no rep is given."""
    frame_vecs = [as_embedding(f) for f in frames] if frames else None
    if rep is None:
        if not frame_vecs:
            raise EmptyFrameList(f"record {item_id!r} has neither rep nor frames")
        rep = pool_frames(frame_vecs)
    else:
        rep = as_embedding(rep)
    return ItemRecord(item_id=item_id, rep=rep, frames=frame_vecs)


# --- binary format ---

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def save_corpus(corpus: EmbeddingCorpus, path, format: str = "binary") -> None:
    corpus.validate()
    try:
        if format == "binary":
            _save_binary(corpus, path)
        elif format == "lines":
            _save_lines(corpus, path)
        else:
            raise ValueError(f"unknown format {format!r}")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_corpus(path, format: str = "binary") -> EmbeddingCorpus:
    try:
        if format == "binary":
            corpus = _load_binary(path)
        elif format == "lines":
            corpus = _load_lines(path)
        else:
            raise ValueError(f"unknown format {format!r}")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    corpus.validate()
    return corpus


def _save_binary(corpus: EmbeddingCorpus, path) -> None:
    parts = [MAGIC, struct.pack("<HIQ", FORMAT_VERSION, corpus.dim, len(corpus.records))]
    for rec in corpus.records:
        ident = rec.item_id.encode("utf-8")
        frames = rec.frames or []
        parts.append(struct.pack("<H", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<I", len(frames)))
        for f in frames:
            parts.append(np.asarray(f, "<f4").tobytes())
        parts.append(np.asarray(rec.rep, "<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _load_binary(path) -> EmbeddingCorpus:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise BadMagic("not a corpus file (bad magic)")
    version, dim, count = reader.unpack("<HIQ")
    if version != FORMAT_VERSION:
        raise BadMagic(f"unsupported format version {version}")
    records = []
    for _ in range(count):
        (id_len,) = reader.unpack("<H")
        item_id = reader.take(id_len).decode("utf-8")
        (n_frames,) = reader.unpack("<I")
        frames = None
        if n_frames:
            raw = reader.take(4 * n_frames * dim)
            mat = np.frombuffer(raw, "<f4").reshape(n_frames, dim)
            frames = [mat[i].copy() for i in range(n_frames)]
        rep = np.frombuffer(reader.take(4 * dim), "<f4").copy()
        records.append(ItemRecord(item_id=item_id, rep=rep, frames=frames))
    if reader.pos != len(reader.data):
        raise TruncatedFile(f"{len(reader.data) - reader.pos} trailing bytes")
    return EmbeddingCorpus(dim=dim, records=records)


# --- line-delimited format ---

def _save_lines(corpus: EmbeddingCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            obj = {"item_id": rec.item_id, "rep": [float(v) for v in rec.rep]}
            if rec.frames is not None:
                obj["frames"] = [[float(v) for v in f] for f in rec.frames]
            fh.write(json.dumps(obj) + "\n")


def _load_lines(path) -> EmbeddingCorpus:
    records = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: {exc}", line_no) from exc
            if "item_id" not in obj:
                raise ParseError(f"line {line_no}: missing item_id", line_no)
            rec = make_record(obj["item_id"], frames=obj.get("frames"), rep=obj.get("rep"))
            if dim is None:
                dim = rec.rep.size
            elif rec.rep.size != dim:
                raise TruncatedFile(f"line {line_no}: dim {rec.rep.size} != {dim}")
            records.append(rec)
    if dim is None:
        raise ParseError("empty corpus file")
    return EmbeddingCorpus(dim=dim, records=records)
