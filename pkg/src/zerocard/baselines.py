"""Statistical estimators: per-column histograms and uniform sampling.

Histogram selectivities are combined across columns by one of three
heuristics: independence (product), exponential backoff (damped product of
the four most selective predicates), or the minimum. The two multiplicative
heuristics deliberately accumulate in 32-bit floats, which is what lets
long conjunctions of small selectivities underflow to an exact zero
estimate, the failure mode the evaluation harness tracks.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .distribution import (
    Query,
    bucket_index,
    conjoin_intervals,
    hash_bucket,
    numeric_predicate_vector,
    operator_to_interval,
    predicate_mask,
)
from .errors import KindMismatch, UnknownColumn
from .tables import ColumnKind, TableHandle

MAX_BUCKETS = 200

HEURISTICS = ("avi", "ebo", "minsel")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class ColumnHistogram:
    """Equi-width (numerical) or hash-domain (categorical) bucket counts."""

    column_id: str
    kind: ColumnKind
    bucket_count: int
    counts: np.ndarray  # int64, sums to N - null_count
    n_rows: int
    null_count: int
    l: float = 0.0
    u: float = 0.0

    def __post_init__(self):
        if self.bucket_count > MAX_BUCKETS:
            raise ValueError(f"bucket_count {self.bucket_count} > {MAX_BUCKETS}")


def build_histogram(table: TableHandle, column_id: str, buckets: int = MAX_BUCKETS) -> ColumnHistogram:
    """Bucket counts for one column, built once per column."""
    buckets = min(buckets, MAX_BUCKETS)
    col = table.column(column_id)
    present = table.non_null_values(column_id)
    counts = np.zeros(buckets, dtype=np.int64)
    if col.kind is ColumnKind.NUMERICAL:
        if present.size:
            idx = np.atleast_1d(bucket_index(present, col.l, col.u, buckets))
            counts = np.bincount(idx, minlength=buckets).astype(np.int64)
        return ColumnHistogram(
            column_id=column_id,
            kind=col.kind,
            bucket_count=buckets,
            counts=counts,
            n_rows=table.n_rows,
            null_count=col.null_count,
            l=col.l,
            u=col.u,
        )
    cache: dict[str, int] = {}
    for v in present:
        s = str(v)
        b = cache.get(s)
        if b is None:
            b = hash_bucket(s, buckets)
            cache[s] = b
        counts[b] += 1
    return ColumnHistogram(
        column_id=column_id,
        kind=col.kind,
        bucket_count=buckets,
        counts=counts,
        n_rows=table.n_rows,
        null_count=col.null_count,
    )


def build_histograms(table: TableHandle, buckets: int = MAX_BUCKETS) -> dict[str, ColumnHistogram]:
    return {c.column_id: build_histogram(table, c.column_id, buckets) for c in table.columns}


def predicate_selectivity(hist: ColumnHistogram, op: str, value) -> float:
    """Estimated match fraction of one predicate against its histogram.

    Fractions are relative to the full row count, so null rows (which never
    match) dilute the selectivity exactly as they do the true count.
    """
    if hist.n_rows == 0:
        return 0.0
    if hist.kind is ColumnKind.NUMERICAL:
        interval = operator_to_interval(op, float(value), hist.l, hist.u)
        cov = numeric_predicate_vector(interval, hist.l, hist.u, hist.bucket_count)
        return float(cov @ hist.counts) / hist.n_rows
    if op != "=":
        raise KindMismatch(f"categorical histogram only supports '=', got {op!r}")
    return float(hist.counts[hash_bucket(str(value), hist.bucket_count)]) / hist.n_rows


def column_group_selectivity(hist: ColumnHistogram, preds) -> float:
    """Selectivity of all of a query's predicates on one column, conjoined."""
    if hist.kind is ColumnKind.NUMERICAL:
        ivs = [operator_to_interval(p.op, float(p.value), hist.l, hist.u) for p in preds]
        cov = numeric_predicate_vector(conjoin_intervals(ivs), hist.l, hist.u, hist.bucket_count)
        return float(cov @ hist.counts) / hist.n_rows if hist.n_rows else 0.0
    literals = {str(p.value) for p in preds}
    for p in preds:
        if p.op != "=":
            raise KindMismatch(f"categorical histogram only supports '=', got {p.op!r}")
    if len(literals) > 1:
        return 0.0
    return predicate_selectivity(hist, "=", literals.pop())


def combine_avi(selectivities) -> float:
    """Independence assumption: plain product, accumulated in float32."""
    s = np.float32(1.0)
    for x in selectivities:
        s = np.float32(s * np.float32(x))
    return float(s)


def combine_ebo(selectivities) -> float:
    """Damped product of the four smallest selectivities (exponents 1, 1/2, 1/4, 1/8)."""
    srt = sorted(float(x) for x in selectivities)[:4]
    exponents = (1.0, 0.5, 0.25, 0.125)
    s = np.float32(1.0)
    for x, e in zip(srt, exponents):
        s = np.float32(s * np.float32(np.float32(x) ** np.float32(e)))
    return float(s)


def combine_minsel(selectivities) -> float:
    """Most selective predicate wins; immune to multiplicative underflow."""
    return float(min(float(x) for x in selectivities))


_COMBINERS = {"avi": combine_avi, "ebo": combine_ebo, "minsel": combine_minsel}


def hist_estimate(
    heuristic: str,
    histograms: dict[str, ColumnHistogram],
    query: Query,
    n_rows: int,
) -> int:
    """round(combined selectivity * N); a 0 here counts as a failure."""
    if heuristic not in _COMBINERS:
        raise ValueError(f"unknown heuristic {heuristic!r}; pick from {sorted(_COMBINERS)}")
    groups: dict[str, list] = {}
    for p in query.predicates:
        if p.column_id not in histograms:
            raise UnknownColumn(p.column_id)
        groups.setdefault(p.column_id, []).append(p)
    if not groups:
        return n_rows
    sels = [column_group_selectivity(histograms[cid], preds) for cid, preds in groups.items()]
    return round_half_up(_COMBINERS[heuristic](sels) * n_rows)


def serialize_histograms(histograms: dict[str, ColumnHistogram]) -> bytes:
    """Compact binary form; its length is the reported structure size."""
    out = bytearray()
    for cid in sorted(histograms):
        hist = histograms[cid]
        meta = json.dumps(
            {
                "column": cid,
                "kind": hist.kind.value,
                "buckets": hist.bucket_count,
                "n": hist.n_rows,
                "nulls": hist.null_count,
                "l": hist.l,
                "u": hist.u,
            },
            sort_keys=True,
        ).encode("utf-8")
        out += struct.pack("<I", len(meta)) + meta
        out += np.ascontiguousarray(hist.counts, dtype="<i8").tobytes()
    return bytes(out)


@dataclass
class SampleStore:
    """Seeded uniform row sample (without replacement) of one table."""

    rate: float
    n_rows: int
    sampled: TableHandle

    def __post_init__(self):
        if not (0.0 < self.rate <= 1.0):
            raise ValueError(f"rate must be in (0, 1], got {self.rate}")


def build_sample(table: TableHandle, rate: float, seed: int) -> SampleStore:
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    n_sample = round_half_up(rate * table.n_rows)
    idx = np.sort(rng.choice(table.n_rows, size=n_sample, replace=False)) if n_sample else np.array([], dtype=np.int64)
    values = {cid: v[idx] for cid, v in table.values.items()}
    masks = {cid: m[idx] for cid, m in table.null_masks.items()}
    sampled = TableHandle(
        table_id=table.table_id,
        n_rows=n_sample,
        columns=table.columns,
        values=values,
        null_masks=masks,
    )
    return SampleStore(rate=rate, n_rows=table.n_rows, sampled=sampled)


def sample_estimate(store: SampleStore, query: Query) -> int:
    """Count on the sample scaled by 1/rate; zero matches is a failure."""
    mask = np.ones(store.sampled.n_rows, dtype=bool)
    for pred in query.predicates:
        col = store.sampled.column(pred.column_id)
        mask &= predicate_mask(
            store.sampled.values[pred.column_id],
            store.sampled.null_masks[pred.column_id],
            col.kind,
            pred.op,
            pred.value,
        )
    return round_half_up(int(mask.sum()) / store.rate)


def serialize_sample(store: SampleStore) -> bytes:
    """Byte size proxy for the sampled rows (CSV-equivalent payload)."""
    out = bytearray()
    table = store.sampled
    for c in table.columns:
        null = table.null_masks[c.column_id]
        if c.kind is ColumnKind.NUMERICAL:
            out += np.ascontiguousarray(table.values[c.column_id], dtype="<f8").tobytes()
        else:
            for v in table.values[c.column_id]:
                out += str(v).encode("utf-8") + b"\x00"
        out += np.packbits(null).tobytes()
    return bytes(out)
