"""Column-text serialization and semantic embedding access.

Column definitions are flattened to "name, type[, constraints][, comment]"
and mapped to unit-norm vectors either by a binary embedding store written
by the external exporter, or by a deterministic hash-seeded stub that keeps
the rest of the pipeline testable without a language model.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distribution import hash64
from .errors import FormatError, MissingEmbedding
from .tables import ColumnDescriptor

STORE_MAGIC = b"ZCEMB1\n"
DEFAULT_DIM = 384

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_TOKEN_RE = re.compile(r"[0-9a-z]+")


def serialize_column_text(descriptor: ColumnDescriptor) -> str:
    """Flatten a column definition to its comma-separated text form.

    Elements appear in the order name, data type, constraints, comment;
    empty or missing optional elements are omitted entirely.
    """
    parts = [descriptor.name]
    for elem in (descriptor.data_type_text, descriptor.constraints_text, descriptor.comment_text):
        if elem:
            parts.append(elem)
    return ", ".join(parts)


def _splitmix_uniforms(seed: int, d: int) -> np.ndarray:
    """d deterministic uniforms in [0, 1) from a SplitMix64 stream."""
    steps = np.arange(1, d + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + steps * np.uint64(_SPLITMIX_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _token_vector(token: str, d: int, seed: int) -> np.ndarray:
    stream_seed = seed ^ hash64(token)
    return 2.0 * _splitmix_uniforms(stream_seed, d) - 1.0


def stub_embed(text: str, d: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-embedding of a column text.

    Lowercases, splits on non-alphanumeric runs, averages per-token hash-
    seeded vectors, then L2-normalizes. Shared tokens between two texts pull
    their vectors together, which is the only property the pipeline needs
    from a stand-in encoder.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    tokens = _TOKEN_RE.findall(text.lower())
    if tokens:
        acc = np.zeros(d, dtype=np.float64)
        for t in tokens:
            acc += _token_vector(t, d, seed)
        vec = acc / len(tokens)
    else:
        vec = _token_vector(text, d, seed)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = _token_vector(text, d, seed)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec = np.zeros(d, dtype=np.float64)
            vec[0] = 1.0
            norm = 1.0
    return vec / norm


@dataclass
class EmbeddingStore:
    """Immutable map from serialized column text to a unit-norm f32 vector."""

    d: int
    entries: dict[str, np.ndarray]
    normalized: bool = True

    def lookup(self, column_text: str) -> np.ndarray:
        try:
            return self.entries[column_text]
        except KeyError:
            raise MissingEmbedding(f"no embedding for column text {column_text!r}") from None


def write_embedding_store(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize a store in the ZCEMB1 container (f32 little-endian)."""
    header = json.dumps(
        {"d": store.d, "count": len(store.entries), "normalized": store.normalized},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(STORE_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for key, vec in store.entries.items():
            if vec.shape != (store.d,):
                raise FormatError(f"vector for {key!r} has shape {vec.shape}, expected ({store.d},)")
            kb = key.encode("utf-8")
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def load_embedding_store(path: str | Path) -> EmbeddingStore:
    """Load a ZCEMB1 file; bit-exact round-trip of every f32 component."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(STORE_MAGIC)] != STORE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:7]!r}")
    off = len(STORE_MAGIC)
    if len(blob) < off + 4:
        raise FormatError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) < off + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header: {e}") from None
    off += hlen
    d = header.get("d")
    count = header.get("count")
    if not isinstance(d, int) or d < 1 or not isinstance(count, int) or count < 0:
        raise FormatError(f"{path}: invalid header {header!r}")
    entries: dict[str, np.ndarray] = {}
    vec_bytes = 4 * d
    for _ in range(count):
        if len(blob) < off + 4:
            raise FormatError(f"{path}: truncated record header")
        (klen,) = struct.unpack_from("<I", blob, off)
        off += 4
        if len(blob) < off + klen + vec_bytes:
            raise FormatError(f"{path}: truncated record")
        key = blob[off : off + klen].decode("utf-8")
        off += klen
        vec = np.frombuffer(blob[off : off + vec_bytes], dtype="<f4").copy()
        off += vec_bytes
        if key in entries:
            raise FormatError(f"{path}: duplicate key {key!r}")
        entries[key] = vec
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return EmbeddingStore(d=d, entries=entries, normalized=bool(header.get("normalized", False)))


def stub_store_for_texts(texts, d: int = DEFAULT_DIM, seed: int = 0) -> EmbeddingStore:
    """Build an in-memory store of stub embeddings for the given texts."""
    entries: dict[str, np.ndarray] = {}
    for t in texts:
        if t not in entries:
            entries[t] = stub_embed(t, d, seed).astype(np.float32)
    return EmbeddingStore(d=d, entries=entries)


def stub_store_for_tables(tables, d: int = DEFAULT_DIM, seed: int = 0) -> EmbeddingStore:
    """Stub store covering every column of the given table handles."""
    texts = [serialize_column_text(c) for t in tables for c in t.columns]
    return stub_store_for_texts(texts, d, seed)
