"""Typed tabular storage: CSV ingestion, per-column statistics, value access.

A table is fully materialized in memory. Numerical columns are stored as
float64 regardless of the declared SQL type; categorical columns as string
objects. Empty CSV cells are nulls: they never match a predicate and are
excluded from distributions and bounds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import EmptyColumn, ParseError, SchemaMismatch, UnknownColumn


class ColumnKind(Enum):
    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnDescriptor:
    """Schema-level identity of one column."""

    column_id: str
    name: str
    data_type_text: str
    kind: ColumnKind
    constraints_text: str | None = None
    comment_text: str | None = None
    l: float = 0.0
    u: float = 0.0
    null_count: int = 0

    def __post_init__(self):
        if not self.name:
            raise ValueError("column name must be non-empty")
        if self.kind is ColumnKind.NUMERICAL:
            if not (np.isfinite(self.l) and np.isfinite(self.u)):
                raise ValueError(f"{self.name}: bounds must be finite")
            if self.l > self.u:
                raise ValueError(f"{self.name}: l={self.l} > u={self.u}")


@dataclass(frozen=True)
class ColumnStats:
    n_rows: int
    null_count: int
    l: float | None = None
    u: float | None = None


@dataclass
class TableHandle:
    """Immutable materialized table; safe for concurrent readers."""

    table_id: str
    n_rows: int
    columns: list[ColumnDescriptor]
    values: dict[str, np.ndarray] = field(repr=False)
    null_masks: dict[str, np.ndarray] = field(repr=False)

    def column(self, column_id: str) -> ColumnDescriptor:
        for c in self.columns:
            if c.column_id == column_id:
                return c
        raise UnknownColumn(f"table {self.table_id!r} has no column {column_id!r}")

    def non_null_values(self, column_id: str) -> np.ndarray:
        self.column(column_id)
        return self.values[column_id][~self.null_masks[column_id]]


def load_schema(path: str | Path) -> dict:
    """Parse a sidecar schema JSON file and validate its shape."""
    with open(path, "r", encoding="utf-8") as f:
        schema = json.load(f)
    if not isinstance(schema, dict) or "table_id" not in schema or "columns" not in schema:
        raise SchemaMismatch(f"{path}: schema must define table_id and columns")
    for col in schema["columns"]:
        if "name" not in col or not col["name"]:
            raise SchemaMismatch(f"{path}: every schema column needs a name")
        if col.get("kind") not in ("numerical", "categorical"):
            raise SchemaMismatch(
                f"{path}: column {col.get('name')!r} kind must be "
                f"'numerical' or 'categorical'"
            )
    return schema


def _build_columns(schema: dict, raw: dict[str, list[str | None]], n: int):
    values: dict[str, np.ndarray] = {}
    null_masks: dict[str, np.ndarray] = {}
    descriptors: list[ColumnDescriptor] = []
    for col in schema["columns"]:
        name = col["name"]
        kind = ColumnKind(col["kind"])
        cells = raw[name]
        null = np.array([c is None for c in cells], dtype=bool)
        if kind is ColumnKind.NUMERICAL:
            vals = np.zeros(n, dtype=np.float64)
            for i, c in enumerate(cells):
                if c is None:
                    continue
                try:
                    vals[i] = float(c)
                except ValueError:
                    raise ParseError(row=i, column=name, cell=c) from None
            present = vals[~null]
            l = float(present.min()) if present.size else 0.0
            u = float(present.max()) if present.size else 0.0
        else:
            vals = np.array([c if c is not None else "" for c in cells], dtype=object)
            l = u = 0.0
        descriptors.append(
            ColumnDescriptor(
                column_id=name,
                name=name,
                data_type_text=col.get("data_type", ""),
                kind=kind,
                constraints_text=col.get("constraints"),
                comment_text=col.get("comment"),
                l=l,
                u=u,
                null_count=int(null.sum()),
            )
        )
        values[name] = vals
        null_masks[name] = null
    return descriptors, values, null_masks


def ingest_csv(path: str | Path, schema: dict) -> TableHandle:
    """Load an RFC-4180 CSV (UTF-8, header row required) under a schema.

    The header must match the schema's column names exactly and in order.
    Empty cells are nulls. A non-empty cell that does not parse as a number
    in a numerical column aborts ingestion with ParseError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    expected = [c["name"] for c in schema["columns"]]
    raw: dict[str, list[str | None]] = {name: [] for name in expected}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: missing header row") from None
        if header != expected:
            raise SchemaMismatch(
                f"{path}: header {header!r} does not match schema columns {expected!r}"
            )
        n = 0
        for row in reader:
            if len(row) != len(expected):
                raise ParseError(row=n, column="<row>", cell=",".join(row))
            for name, cell in zip(expected, row):
                raw[name].append(cell if cell != "" else None)
            n += 1
    descriptors, values, null_masks = _build_columns(schema, raw, n)
    return TableHandle(
        table_id=schema["table_id"],
        n_rows=n,
        columns=descriptors,
        values=values,
        null_masks=null_masks,
    )


def from_arrays(
    table_id: str,
    columns: list[ColumnDescriptor],
    values: dict[str, np.ndarray],
    null_masks: dict[str, np.ndarray] | None = None,
) -> TableHandle:
    """Build a TableHandle directly from arrays (synthetic corpora, tests).

    Descriptors are rebuilt with bounds/null counts computed from the data so
    the handle invariants hold regardless of what the caller passed in.
    """
    sizes = {v.shape[0] for v in values.values()}
    if len(sizes) > 1:
        raise ValueError(f"ragged columns: {sizes}")
    n = sizes.pop() if sizes else 0
    if null_masks is None:
        null_masks = {c.column_id: np.zeros(n, dtype=bool) for c in columns}
    fixed = []
    for c in columns:
        null = null_masks[c.column_id]
        if c.kind is ColumnKind.NUMERICAL:
            present = values[c.column_id][~null]
            l = float(present.min()) if present.size else 0.0
            u = float(present.max()) if present.size else 0.0
        else:
            l = u = 0.0
        fixed.append(
            ColumnDescriptor(
                column_id=c.column_id,
                name=c.name,
                data_type_text=c.data_type_text,
                kind=c.kind,
                constraints_text=c.constraints_text,
                comment_text=c.comment_text,
                l=l,
                u=u,
                null_count=int(null.sum()),
            )
        )
    return TableHandle(table_id, n, fixed, dict(values), dict(null_masks))


def column_stats(table: TableHandle, column_id: str) -> ColumnStats:
    """Row count, null count and (for numerical columns) value bounds."""
    col = table.column(column_id)
    if col.kind is ColumnKind.NUMERICAL:
        return ColumnStats(table.n_rows, col.null_count, col.l, col.u)
    return ColumnStats(table.n_rows, col.null_count)


def sample_value(table: TableHandle, column_id: str, rng: np.random.Generator):
    """Draw one value uniformly from the column's non-null cells."""
    col = table.column(column_id)
    present = table.non_null_values(column_id)
    if present.size == 0:
        raise EmptyColumn(f"{table.table_id}.{column_id} has no non-null cells")
    idx = int(rng.integers(0, present.size))
    v = present[idx]
    return float(v) if col.kind is ColumnKind.NUMERICAL else str(v)


def schema_for_table(table: TableHandle) -> dict:
    """Reconstruct the sidecar schema dict for a handle (serialization aid)."""
    cols = []
    for c in table.columns:
        entry: dict = {"name": c.name, "data_type": c.data_type_text, "kind": c.kind.value}
        if c.constraints_text is not None:
            entry["constraints"] = c.constraints_text
        if c.comment_text is not None:
            entry["comment"] = c.comment_text
        cols.append(entry)
    return {"table_id": table.table_id, "columns": cols}


def write_table_csv(table: TableHandle, path: str | Path) -> None:
    """Serialize a handle back to CSV (lossless for categorical cells)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([c.name for c in table.columns])
        for i in range(table.n_rows):
            row = []
            for c in table.columns:
                if table.null_masks[c.column_id][i]:
                    row.append("")
                elif c.kind is ColumnKind.NUMERICAL:
                    row.append(repr(float(table.values[c.column_id][i])))
                else:
                    row.append(str(table.values[c.column_id][i]))
            writer.writerow(row)
