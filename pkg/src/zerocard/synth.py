"""Synthetic table corpus with semantically coherent column families.

The generator is built so that schema text genuinely predicts data shape,
which is the property a semantics-driven estimator needs to have something
to learn at desk scale:

* every table follows one of three themed schema rosters, so a held-out
  table presents column combinations the estimator has seen before;
* ambiguous families (``metric_value``, ``activity_score``) keep the same
  definition text under every theme but change distribution with the
  theme, while each roster carries a theme-indicator column, so shape is
  resolvable only from the context of co-queried columns;
* spread/skew tags inside comments fix the rough parameter regime of the
  unambiguous families, making distribution prediction learnable;
* a categorical tier column steers the scale of a linked load column row
  by row, so conjunctions across the pair break the independence
  assumption that the histogram baselines rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tables import (
    ColumnDescriptor,
    ColumnKind,
    TableHandle,
    from_arrays,
    schema_for_table,
    write_table_csv,
)

_SPREAD_TAGS = ["tiny", "small", "medium", "large", "huge"]
_SPREAD_HI = {"tiny": 40, "small": 200, "medium": 1200, "large": 6000, "huge": 30000}
_SKEW_TAGS = {"mild": 0.6, "strong": 1.1, "extreme": 1.6}
THEMES = ("retail", "telemetry", "clinical")

AMBIGUOUS_COLUMNS = ("metric_value", "activity_score")
_AMBIGUOUS_SHAPES = {
    "metric_value": {"retail": "lognormal", "telemetry": "uniform", "clinical": "normal"},
    "activity_score": {"retail": "uniform", "telemetry": "exponential", "clinical": "lognormal"},
}

# (name, type, comment template, generator key); one roster per theme.
_ROSTERS = {
    "retail": [
        ("store_region", "varchar", "retail sales region code", "indicator:rg:12"),
        ("metric_value", "double", "primary recorded metric", "ambiguous"),
        ("activity_score", "double", "aggregated activity score", "ambiguous"),
        ("price_amount", "double", "right skewed monetary amount, {tag} skew", "lognormal_tagged"),
        ("user_id", "bigint", "uniformly assigned identifier, {tag} range", "uniform_tagged"),
        ("status_flag", "varchar", "skewed small status vocabulary", "cat_zipf:st"),
    ],
    "telemetry": [
        ("probe_node", "varchar", "telemetry probe node identifier", "indicator:nd:30"),
        ("metric_value", "double", "primary recorded metric", "ambiguous"),
        ("activity_score", "double", "aggregated activity score", "ambiguous"),
        ("wait_duration_ms", "double", "exponential waiting time, {tag} scale", "exponential_tagged"),
        ("slot_index", "bigint", "uniformly assigned identifier, {tag} range", "uniform_tagged"),
        ("job_state", "varchar", "skewed small status vocabulary", "cat_zipf:jb"),
    ],
    "clinical": [
        ("ward_code", "varchar", "clinical ward assignment code", "indicator:wd:9"),
        ("metric_value", "double", "primary recorded metric", "ambiguous"),
        ("activity_score", "double", "aggregated activity score", "ambiguous"),
        ("height_cm", "double", "bell shaped physical reading, {tag} spread", "normal_tagged"),
        ("order_id", "bigint", "uniformly assigned identifier, {tag} range", "uniform_tagged"),
        ("zone_label", "varchar", "uniform short location code", "cat_uniform:loc"),
    ],
}

_EXTRAS = [
    ("sku_code", "varchar", "high cardinality opaque key", "cat_highcard:k"),
    ("schema_version", "int", "constant configuration value", "constant"),
]

# Correlated pairs: the categorical driver steers the numerical column's
# scale row by row; comments share the driver/driven phrasing so the pair
# relation is readable from the schema text alone.
_CORRELATED_PAIRS = [
    (
        ("tier_class", "varchar", "service tier driving the linked load columns", "tier"),
        ("load_factor", "double", "load level strongly tied to the service tier"),
    ),
]


def _zipf_weights(k: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** s
    return w / w.sum()


def _draw_shape(rng: np.random.Generator, shape: str, n: int) -> np.ndarray:
    if shape == "uniform":
        return rng.uniform(0.0, float(rng.integers(200, 3000)), size=n).round(3)
    if shape == "lognormal":
        return np.round(rng.lognormal(mean=3.0, sigma=1.25, size=n), 2)
    if shape == "exponential":
        return np.round(rng.exponential(scale=float(rng.uniform(20, 80)), size=n), 3)
    if shape == "normal":
        mu = float(rng.uniform(80, 120))
        return np.round(rng.normal(mu, float(rng.uniform(8, 18)), size=n), 3)
    raise ValueError(shape)


def _draw_tagged(rng: np.random.Generator, how: str, tag: str, n: int) -> np.ndarray:
    if how == "uniform_tagged":
        return rng.integers(0, _SPREAD_HI[tag], size=n).astype(np.float64)
    if how == "lognormal_tagged":
        return np.round(rng.lognormal(mean=3.0, sigma=_SKEW_TAGS[tag], size=n), 2)
    if how == "exponential_tagged":
        return np.round(rng.exponential(scale=_SPREAD_HI[tag] / 50.0, size=n), 3)
    if how == "normal_tagged":
        mu = float(rng.uniform(0, 200))
        return np.round(rng.normal(mu, _SPREAD_HI[tag] / 100.0, size=n), 3)
    raise ValueError(how)


def _draw_cat(rng: np.random.Generator, how: str, prefix: str, n: int) -> np.ndarray:
    if how == "cat_uniform":
        k = int(rng.integers(5, 40))
        pool = np.array([f"{prefix}{i:03d}" for i in range(k)], dtype=object)
        return pool[rng.integers(0, k, size=n)]
    if how == "cat_zipf":
        k = int(rng.integers(4, 25))
        pool = np.array([f"{prefix}{i:03d}" for i in range(k)], dtype=object)
        return pool[rng.choice(k, size=n, p=_zipf_weights(k, 1.3))]
    if how == "cat_highcard":
        k = int(rng.integers(200, 900))
        pool = np.array([f"{prefix}{i:04d}" for i in range(k)], dtype=object)
        return pool[rng.choice(k, size=n, p=_zipf_weights(k, 1.05))]
    raise ValueError(how)


@dataclass(frozen=True)
class CorpusSpec:
    n_tables: int = 50
    min_rows: int = 300
    max_rows: int = 2500
    null_fraction: float = 0.02
    correlated_fraction: float = 0.75
    extra_fraction: float = 0.5


def make_table(rng: np.random.Generator, table_id: str, spec: CorpusSpec) -> TableHandle:
    n = int(rng.integers(spec.min_rows, spec.max_rows + 1))
    theme = THEMES[int(rng.integers(0, len(THEMES)))]
    descriptors: list[ColumnDescriptor] = []
    values: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}

    def add_column(name, type_text, comment, kind, col_values):
        null = (
            rng.random(n) < spec.null_fraction
            if rng.random() < 0.5
            else np.zeros(n, dtype=bool)
        )
        if null.all():
            null[0] = False
        descriptors.append(
            ColumnDescriptor(
                column_id=name,
                name=name,
                data_type_text=type_text,
                kind=kind,
                comment_text=comment,
            )
        )
        values[name] = col_values
        masks[name] = null

    for name, type_text, comment, gen in _ROSTERS[theme]:
        if gen.startswith("indicator:"):
            _, prefix, k = gen.split(":")
            k = int(k)
            pool = np.array([f"{prefix}{i:03d}" for i in range(k)], dtype=object)
            add_column(name, type_text, comment, ColumnKind.CATEGORICAL,
                       pool[rng.integers(0, k, size=n)])
        elif gen == "ambiguous":
            shape = _AMBIGUOUS_SHAPES[name][theme]
            add_column(name, type_text, comment, ColumnKind.NUMERICAL,
                       _draw_shape(rng, shape, n))
        elif gen.startswith("cat_"):
            how, prefix = gen.split(":")
            add_column(name, type_text, comment, ColumnKind.CATEGORICAL,
                       _draw_cat(rng, how, prefix, n))
        else:
            tags = list(_SKEW_TAGS) if "skew" in comment else _SPREAD_TAGS
            tag = tags[int(rng.integers(0, len(tags)))]
            add_column(name, type_text, comment.format(tag=tag), ColumnKind.NUMERICAL,
                       _draw_tagged(rng, gen, tag, n))

    if rng.random() < spec.correlated_fraction:
        (name, type_text, comment, prefix), (dname, dtype_text, dcomment) = _CORRELATED_PAIRS[0]
        k = int(rng.integers(3, 6))
        pool = np.array([f"{prefix}{i}" for i in range(k)], dtype=object)
        codes = rng.choice(k, size=n, p=_zipf_weights(k, 1.1))
        add_column(name, type_text, comment, ColumnKind.CATEGORICAL, pool[codes])
        scales = np.geomspace(2.0, 300.0, k)[rng.permutation(k)]
        add_column(dname, dtype_text, dcomment, ColumnKind.NUMERICAL,
                   np.round(rng.exponential(scale=scales[codes]), 3))

    if rng.random() < spec.extra_fraction:
        name, type_text, comment, gen = _EXTRAS[int(rng.integers(0, len(_EXTRAS)))]
        if gen == "constant":
            add_column(name, type_text, comment, ColumnKind.NUMERICAL,
                       np.full(n, float(rng.integers(1, 12))))
        else:
            how, prefix = gen.split(":")
            add_column(name, type_text, comment, ColumnKind.CATEGORICAL,
                       _draw_cat(rng, how, prefix, n))
    return from_arrays(table_id, descriptors, values, masks)


def generate_corpus(spec: CorpusSpec, seed: int) -> list[TableHandle]:
    """Deterministic list of synthetic tables; one child stream per table."""
    tables = []
    for i in range(spec.n_tables):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        tables.append(make_table(rng, f"synth_{i:03d}", spec))
    return tables


def write_corpus(tables: list[TableHandle], tables_dir: str | Path, schema_dir: str | Path) -> None:
    """Write each table as CSV plus its sidecar schema JSON."""
    import json

    tables_dir = Path(tables_dir)
    schema_dir = Path(schema_dir)
    tables_dir.mkdir(parents=True, exist_ok=True)
    schema_dir.mkdir(parents=True, exist_ok=True)
    for t in tables:
        write_table_csv(t, tables_dir / f"{t.table_id}.csv")
        with open(schema_dir / f"{t.table_id}.json", "w", encoding="utf-8") as f:
            json.dump(schema_for_table(t), f, indent=2, sort_keys=True)
            f.write("\n")
