"""Bucketed column distributions, predicate coverage vectors, exact oracle.

Numerical columns are histogrammed into h equi-width buckets over [l, u];
a range predicate becomes a per-bucket coverage vector via linear
interpolation. Categorical values are first mapped into the 64-bit hash
domain and bucketed there, with equality predicates becoming one-hot
vectors. Bucket indexing is 0-based throughout.

Degenerate (single-point) numerical intervals are encoded as a one-hot at
the containing bucket, mirroring the categorical rule: the plain overlap
formula would produce an all-zero vector indistinguishable from an empty
predicate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidBounds, KindMismatch
from .tables import ColumnKind, TableHandle

_MASK64 = 0xFFFFFFFFFFFFFFFF
_C1 = 0x87C37B91114253D5
_C2 = 0x4CF5AD432745937F
HASH_DOMAIN = 1 << 64

OPERATORS = ("<", ">", "=", "<=", ">=")


def _rotl64(x: int, r: int) -> int:
    return ((x << r) | (x >> (64 - r))) & _MASK64


def _fmix64(k: int) -> int:
    k ^= k >> 33
    k = (k * 0xFF51AFD7ED558CCD) & _MASK64
    k ^= k >> 33
    k = (k * 0xC4CEB9FE1A85EC53) & _MASK64
    k ^= k >> 33
    return k


def hash64(data: bytes | str) -> int:
    """MurmurHash3 x64_128 (seed 0), first 8 output bytes as a little-endian u64.

    Bit-exact across platforms; used for categorical bucketing and for
    seeding the deterministic embedding stub.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    length = len(data)
    h1 = 0
    h2 = 0
    nblocks = length // 16
    for b in range(nblocks):
        off = b * 16
        k1 = int.from_bytes(data[off : off + 8], "little")
        k2 = int.from_bytes(data[off + 8 : off + 16], "little")
        k1 = (k1 * _C1) & _MASK64
        k1 = _rotl64(k1, 31)
        k1 = (k1 * _C2) & _MASK64
        h1 ^= k1
        h1 = _rotl64(h1, 27)
        h1 = (h1 + h2) & _MASK64
        h1 = (h1 * 5 + 0x52DCE729) & _MASK64
        k2 = (k2 * _C2) & _MASK64
        k2 = _rotl64(k2, 33)
        k2 = (k2 * _C1) & _MASK64
        h2 ^= k2
        h2 = _rotl64(h2, 31)
        h2 = (h2 + h1) & _MASK64
        h2 = (h2 * 5 + 0x38495AB5) & _MASK64
    tail = data[nblocks * 16 :]
    if len(tail) >= 9:
        k2 = int.from_bytes(tail[8:], "little")
        k2 = (k2 * _C2) & _MASK64
        k2 = _rotl64(k2, 33)
        k2 = (k2 * _C1) & _MASK64
        h2 ^= k2
    if tail:
        k1 = int.from_bytes(tail[:8], "little")
        k1 = (k1 * _C1) & _MASK64
        k1 = _rotl64(k1, 31)
        k1 = (k1 * _C2) & _MASK64
        h1 ^= k1
    h1 ^= length
    h2 ^= length
    h1 = (h1 + h2) & _MASK64
    h2 = (h2 + h1) & _MASK64
    h1 = _fmix64(h1)
    h2 = _fmix64(h2)
    h1 = (h1 + h2) & _MASK64
    return h1


@dataclass(frozen=True)
class Interval:
    """Closed numerical interval in column units; empty means no row can match."""

    q_l: float = 0.0
    q_u: float = 0.0
    empty: bool = False

    def __post_init__(self):
        if not self.empty and self.q_l > self.q_u:
            raise InvalidBounds(f"interval [{self.q_l}, {self.q_u}]")


EMPTY_INTERVAL = Interval(empty=True)


def bucket_edges(l: float, u: float, h: int) -> np.ndarray:
    """h+1 equi-width edges over [l, u]; the final edge is pinned to u."""
    w = (u - l) / h
    edges = l + w * np.arange(h + 1, dtype=np.float64)
    edges[0] = l
    edges[-1] = u
    return edges


def bucket_index(v, l: float, u: float, h: int):
    """0-based bucket of a value; v == u lands in the last bucket."""
    if l == u:
        return np.zeros_like(np.asarray(v), dtype=np.int64) if np.ndim(v) else 0
    w = (u - l) / h
    idx = np.floor((np.asarray(v, dtype=np.float64) - l) / w).astype(np.int64)
    idx = np.clip(idx, 0, h - 1)
    return idx if np.ndim(v) else int(idx)


def numeric_distribution(values: np.ndarray, l: float, u: float, h: int) -> np.ndarray:
    """Normalized equi-width histogram of non-null numerical cells.

    Returns the all-zero vector for an empty column; a constant column puts
    all mass in bucket 0.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    if l > u:
        raise InvalidBounds(f"l={l} > u={u}")
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    pi = np.zeros(h, dtype=np.float64)
    if n == 0:
        return pi
    idx = bucket_index(values, l, u, h)
    counts = np.bincount(np.atleast_1d(idx), minlength=h)
    return counts.astype(np.float64) / n


def numeric_predicate_vector(interval: Interval, l: float, u: float, h: int) -> np.ndarray:
    """Per-bucket coverage fractions of a (clamped) closed interval.

    Fully contained buckets get 1, disjoint buckets 0, boundary buckets the
    linearly interpolated overlap fraction. A degenerate interval becomes a
    one-hot at its containing bucket.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    if l > u:
        raise InvalidBounds(f"l={l} > u={u}")
    p = np.zeros(h, dtype=np.float64)
    if interval.empty:
        return p
    ql = max(interval.q_l, l)
    qu = min(interval.q_u, u)
    if ql > qu:
        return p
    if l == u:
        p[0] = 1.0
        return p
    if ql == qu:
        p[bucket_index(ql, l, u, h)] = 1.0
        return p
    edges = bucket_edges(l, u, h)
    lo = np.maximum(ql, edges[:-1])
    hi = np.minimum(qu, edges[1:])
    width = edges[1:] - edges[:-1]
    overlap = np.maximum(hi - lo, 0.0)
    safe_w = np.where(width > 0.0, width, 1.0)
    cov = np.minimum(overlap / safe_w, 1.0)
    # Degenerate-width buckets (bounds spanning < h ulps) count as covered
    # whenever the interval touches them.
    cov = np.where((width <= 0.0) & (hi >= lo), 1.0, cov)
    return cov


def hash_bucket(value: str, h: int) -> int:
    """Bucket of a categorical value in the 64-bit hash domain (0-based)."""
    width = HASH_DOMAIN // h
    return min(hash64(value) // width, h - 1)


def categorical_distribution(values, h: int) -> np.ndarray:
    """Normalized hash-bucket histogram of non-null categorical cells."""
    if h < 1:
        raise ValueError("h must be >= 1")
    pi = np.zeros(h, dtype=np.float64)
    values = list(values)
    n = len(values)
    if n == 0:
        return pi
    cache: dict[str, int] = {}
    for v in values:
        s = str(v)
        b = cache.get(s)
        if b is None:
            b = hash_bucket(s, h)
            cache[s] = b
        pi[b] += 1.0
    return pi / n


def categorical_predicate_vector(value: str, h: int) -> np.ndarray:
    """One-hot coverage vector at the value's hash bucket."""
    p = np.zeros(h, dtype=np.float64)
    p[hash_bucket(str(value), h)] = 1.0
    return p


def operator_to_interval(op: str, value: float, l: float, u: float) -> Interval:
    """Map one comparison predicate to a closed interval clamped to [l, u].

    '<' and '<=' are not distinguished at bucket resolution; equality maps
    to the degenerate interval [value, value]. Values outside the domain on
    the non-matching side produce the empty interval.
    """
    if op not in OPERATORS:
        raise ValueError(f"unknown operator {op!r}")
    if l > u:
        raise InvalidBounds(f"l={l} > u={u}")
    if op in ("<", "<="):
        if value < l:
            return EMPTY_INTERVAL
        return Interval(l, min(value, u))
    if op in (">", ">="):
        if value > u:
            return EMPTY_INTERVAL
        return Interval(max(value, l), u)
    if value < l or value > u:
        return EMPTY_INTERVAL
    return Interval(value, value)


def conjoin_intervals(intervals) -> Interval:
    """Intersection of closed intervals; empty in, empty out."""
    lo = -np.inf
    hi = np.inf
    got = False
    for iv in intervals:
        if iv.empty:
            return EMPTY_INTERVAL
        lo = max(lo, iv.q_l)
        hi = min(hi, iv.q_u)
        got = True
    if not got:
        raise ValueError("conjoin_intervals requires at least one interval")
    if lo > hi:
        return EMPTY_INTERVAL
    return Interval(lo, hi)


@dataclass(frozen=True)
class Predicate:
    """One condition 'column op literal'; categorical columns only use '='."""

    column_id: str
    op: str
    value: float | str

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Query:
    """Conjunction of predicates over one table."""

    table_id: str
    predicates: tuple[Predicate, ...]
    true_card: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "predicates", tuple(self.predicates))


def predicate_mask(
    values: np.ndarray, null_mask: np.ndarray, kind: ColumnKind, op: str, literal
) -> np.ndarray:
    """Boolean row mask of one predicate; null cells never match."""
    if kind is ColumnKind.NUMERICAL:
        x = np.asarray(values, dtype=np.float64)
        lit = float(literal)
        if op == "<":
            m = x < lit
        elif op == ">":
            m = x > lit
        elif op == "<=":
            m = x <= lit
        elif op == ">=":
            m = x >= lit
        else:
            m = x == lit
    else:
        if op != "=":
            raise KindMismatch(f"categorical column only supports '=', got {op!r}")
        m = values == str(literal)
    return m & ~null_mask


def selectivity_oracle(table: TableHandle, query: Query) -> int:
    """Exact row count of the predicate conjunction by full scan."""
    mask = np.ones(table.n_rows, dtype=bool)
    for pred in query.predicates:
        col = table.column(pred.column_id)
        mask &= predicate_mask(
            table.values[pred.column_id],
            table.null_masks[pred.column_id],
            col.kind,
            pred.op,
            pred.value,
        )
    return int(mask.sum())


def column_distribution(table: TableHandle, column_id: str, h: int) -> np.ndarray:
    """Ground-truth distribution vector of one column at resolution h."""
    col = table.column(column_id)
    present = table.non_null_values(column_id)
    if col.kind is ColumnKind.NUMERICAL:
        return numeric_distribution(present, col.l, col.u, h)
    return categorical_distribution(present, h)


def column_predicate_vector(
    table: TableHandle, column_id: str, preds: list[Predicate], h: int
) -> np.ndarray:
    """Coverage vector for all predicates of a query touching one column.

    Numerical predicates are conjoined into a single interval first; for
    categorical columns, conflicting equality literals yield the all-zero
    vector (the conjunction can match nothing).
    """
    col = table.column(column_id)
    if col.kind is ColumnKind.NUMERICAL:
        ivs = [operator_to_interval(p.op, float(p.value), col.l, col.u) for p in preds]
        return numeric_predicate_vector(conjoin_intervals(ivs), col.l, col.u, h)
    literals = {str(p.value) for p in preds}
    for p in preds:
        if p.op != "=":
            raise KindMismatch(f"categorical column only supports '=', got {p.op!r}")
    if len(literals) > 1:
        return np.zeros(h, dtype=np.float64)
    return categorical_predicate_vector(literals.pop(), h)
