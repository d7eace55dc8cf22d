"""Batch encoding of schema column texts into an embedding file."""

from __future__ import annotations

import glob
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .serialize import schema_column_texts
from .writer import write_store

DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"


class SchemaParseError(Exception):
    pass


class ModelLoadError(Exception):
    pass


@dataclass
class ExportJob:
    schema_paths: list[str]
    output_path: str
    model_name: str = DEFAULT_MODEL
    normalize: bool = True
    batch_size: int = 32

    def __post_init__(self):
        if not self.schema_paths:
            raise SchemaParseError("no schema files given")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def expand_globs(patterns: list[str]) -> list[str]:
    paths: list[str] = []
    for pattern in patterns:
        matched = sorted(glob.glob(pattern))
        paths.extend(matched if matched else [pattern])
    return paths


def load_schema(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            schema = json.load(f)
    except FileNotFoundError:
        raise SchemaParseError(f"schema file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise SchemaParseError(f"{path}: invalid JSON: {e}") from None
    if "columns" not in schema:
        raise SchemaParseError(f"{path}: schema has no columns array")
    for col in schema["columns"]:
        if not col.get("name"):
            raise SchemaParseError(f"{path}: every column needs a non-empty name")
    return schema


def load_encoder(model_name: str):
    """A sentence-transformer by hub name or local path."""
    try:
        from sentence_transformers import SentenceTransformer

        return SentenceTransformer(model_name, device="cpu")
    except Exception as e:  # model missing, no network, bad path
        raise ModelLoadError(f"cannot load model {model_name!r}: {e}") from None


def export(job: ExportJob, encoder=None) -> dict:
    """Encode every distinct column text and write the ZCEMB1 file.

    The encoder only needs an ``encode(texts, batch_size=...,
    normalize_embeddings=..., convert_to_numpy=True)`` method; by default
    the named sentence-transformer is loaded. Duplicate texts across
    schemas are written once. Returns a small summary dict.
    """
    texts: list[str] = []
    seen: set[str] = set()
    for path in expand_globs(job.schema_paths):
        for text in schema_column_texts(load_schema(path)):
            if text not in seen:
                seen.add(text)
                texts.append(text)
    if encoder is None:
        encoder = load_encoder(job.model_name)
    vectors = encoder.encode(
        texts,
        batch_size=job.batch_size,
        normalize_embeddings=job.normalize,
        convert_to_numpy=True,
    )
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(texts):
        raise ModelLoadError(f"encoder returned shape {vectors.shape} for {len(texts)} texts")
    d = int(vectors.shape[1])
    if job.normalize:
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        bad = np.abs(norms - 1.0) > 1e-6
        if bad.any():
            # some encoders skip normalization for zero vectors; renormalize
            safe = np.where(norms > 0, norms, 1.0)
            vectors = (vectors.astype(np.float64) / safe[:, None]).astype(np.float32)
    entries = {text: vectors[i] for i, text in enumerate(texts)}
    write_store(entries, d, job.normalize, job.output_path)
    return {"output": job.output_path, "d": d, "count": len(entries), "model": job.model_name}
