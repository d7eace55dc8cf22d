"""Command-line pipeline: ingest, embed, generate, train, estimate, eval, serve.

Configuration comes from a JSON file (``--config`` or the ZEROCARD_CONFIG
environment variable) with per-invocation flag overrides. Commands exit 0
on success and nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import socketserver
import sys
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import evaluation, model as zmodel, training
from .distribution import Predicate, Query
from .errors import ConfigError, ZeroCardError
from .estimators import HistogramEstimator, SamplingEstimator, ZeroCardEstimator
from .semantics import (
    load_embedding_store,
    serialize_column_text,
    stub_store_for_texts,
    write_embedding_store,
)
from .tables import TableHandle, ingest_csv, load_schema

METHODS = ("zerocard", "avi", "ebo", "minsel", "sample")
ABLATIONS = ("no-moe", "no-correlation", "no-dist")


@dataclass
class RunConfig:
    tables_dir: str | None = None
    schema_dir: str | None = None
    embeddings: str | None = None
    model: str | None = None
    workload: str | None = None
    report: str | None = None
    seed: int = 0
    queries_per_table: int = 200
    sample_rate: float = 0.01
    hyper: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            path = os.environ.get("ZEROCARD_CONFIG")
        cfg = cls()
        if path:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
            known = {f.name for f in dc_fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            for key, value in data.items():
                setattr(cfg, key, value)
        return cfg

    def hyper_params(self) -> zmodel.HyperParams:
        try:
            return zmodel.HyperParams(**self.hyper)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid hyper block: {e}") from None

    def train_config(self) -> training.TrainConfig:
        block = dict(self.train)
        block.setdefault("seed", self.seed)
        try:
            return training.TrainConfig(**block)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid train block: {e}") from None

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) in (None, "")]
        if missing:
            raise ConfigError(f"missing required config values: {missing}")


def load_tables(config: RunConfig) -> dict[str, TableHandle]:
    config.require("tables_dir", "schema_dir")
    tables_dir = Path(config.tables_dir)
    schema_dir = Path(config.schema_dir)
    if not tables_dir.is_dir():
        raise ConfigError(f"tables dir not found: {tables_dir}")
    out: dict[str, TableHandle] = {}
    for csv_path in sorted(tables_dir.glob("*.csv")):
        schema_path = schema_dir / f"{csv_path.stem}.json"
        if not schema_path.exists():
            raise ConfigError(f"no schema for table file {csv_path.name}")
        schema = load_schema(schema_path)
        table = ingest_csv(csv_path, schema)
        out[table.table_id] = table
    if not out:
        raise ConfigError(f"no .csv tables under {tables_dir}")
    return out


def _load_schemas_only(config: RunConfig) -> list[dict]:
    config.require("schema_dir")
    schema_dir = Path(config.schema_dir)
    paths = sorted(schema_dir.glob("*.json"))
    if not paths:
        raise ConfigError(f"no .json schemas under {schema_dir}")
    return [load_schema(p) for p in paths]


def _descriptor_texts(schemas: list[dict]) -> list[str]:
    from .tables import ColumnDescriptor, ColumnKind

    texts = []
    for schema in schemas:
        for col in schema["columns"]:
            desc = ColumnDescriptor(
                column_id=col["name"],
                name=col["name"],
                data_type_text=col.get("data_type", ""),
                kind=ColumnKind(col["kind"]),
                constraints_text=col.get("constraints"),
                comment_text=col.get("comment"),
            )
            texts.append(serialize_column_text(desc))
    return texts


def cmd_ingest(config: RunConfig, args) -> int:
    tables = load_tables(config)
    manifest = [
        {
            "table_id": t.table_id,
            "n_rows": t.n_rows,
            "columns": [
                {"name": c.name, "kind": c.kind.value, "null_count": c.null_count}
                for c in t.columns
            ],
        }
        for t in sorted(tables.values(), key=lambda t: t.table_id)
    ]
    text = json.dumps(manifest, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_embed_stub(config: RunConfig, args) -> int:
    config.require("embeddings")
    hyper = config.hyper_params()
    texts = _descriptor_texts(_load_schemas_only(config))
    store = stub_store_for_texts(texts, d=hyper.d, seed=config.seed)
    write_embedding_store(store, config.embeddings)
    print(json.dumps({"embeddings": config.embeddings, "d": store.d, "count": len(store.entries)}))
    return 0


def cmd_gen_queries(config: RunConfig, args) -> int:
    config.require("workload")
    hyper = config.hyper_params()
    tables = load_tables(config)
    queries: list[Query] = []
    for i, tid in enumerate(sorted(tables)):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        queries.extend(
            training.generate_queries(
                tables[tid],
                config.queries_per_table,
                rng,
                max_predicates=hyper.max_predicates,
            )
        )
    training.save_workload(queries, config.workload)
    print(json.dumps({"workload": config.workload, "count": len(queries)}))
    return 0


def cmd_train(config: RunConfig, args) -> int:
    config.require("embeddings", "workload", "model")
    hyper = config.hyper_params()
    if args.ablation:
        hyper = hyper.ablated(args.ablation)
    tables = load_tables(config)
    store = load_embedding_store(config.embeddings)
    if store.d != hyper.d:
        raise ConfigError(f"embedding store d={store.d} but hyper d={hyper.d}")
    queries = training.load_workload(config.workload)
    examples = training.build_training_examples(tables, queries, hyper.h, store)
    result = training.train(examples, hyper, config.train_config())
    zmodel.save_params(result.params, config.model)
    history = {
        "initial": vars(result.initial),
        "epochs": [vars(e) for e in result.history],
        "model": config.model,
    }
    text = json.dumps(history, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def _parse_query(obj: dict) -> Query:
    preds = tuple(Predicate(p["column"], p["op"], p["value"]) for p in obj["predicates"])
    return Query(obj["table_id"], preds, obj.get("true_card"))


def _zerocard_estimator(config: RunConfig, tables: dict[str, TableHandle]) -> ZeroCardEstimator:
    import time

    config.require("model", "embeddings")
    t0 = time.perf_counter()
    params = zmodel.load_params(config.model)
    store = load_embedding_store(config.embeddings)
    load_s = time.perf_counter() - t0
    size = Path(config.model).stat().st_size
    return ZeroCardEstimator(params, tables, store, model_size_bytes=size, build_time_s=load_s)


def cmd_estimate(config: RunConfig, args) -> int:
    if not args.query:
        raise ConfigError("estimate requires --query with a JSON query object")
    try:
        obj = json.loads(args.query)
        query = _parse_query(obj)
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigError(f"bad --query payload: {e}") from None
    tables = load_tables(config)
    if query.table_id not in tables:
        raise ConfigError(f"unknown table {query.table_id!r}")
    estimator = _zerocard_estimator(config, tables)
    est = estimator.estimate(query)
    print(json.dumps({"table_id": query.table_id, "estimate": est, "method": "zerocard"}))
    return 0


def cmd_eval(config: RunConfig, args) -> int:
    methods = [m.strip() for m in (args.method or "zerocard,avi,ebo,minsel,sample").split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; pick from {METHODS}")
    config.require("workload")
    tables = load_tables(config)
    workload = [q for q in training.load_workload(config.workload) if q.true_card and q.true_card >= 1]
    rate = args.sample_rate if args.sample_rate is not None else config.sample_rate
    reports = []
    for m in methods:
        if m == "zerocard":
            est = _zerocard_estimator(config, tables)
        elif m == "sample":
            est = SamplingEstimator(tables, rate, config.seed)
        else:
            est = HistogramEstimator(m, tables)
        reports.append(evaluation.evaluate(est, workload))
    out_path = args.out or config.report
    if out_path:
        Path(out_path).write_text(evaluation.reports_to_json(reports) + "\n", encoding="utf-8")
    print(evaluation.reports_to_table(reports))
    return 0


class _ServeHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            try:
                query = _parse_query(json.loads(line))
                est = self.server.estimator.estimate(query)
                reply = {"estimate": int(est), "method": "zerocard"}
            except (ZeroCardError, KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                reply = {"error": type(e).__name__, "message": str(e)}
            self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
            self.wfile.flush()


class _ServeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def cmd_serve(config: RunConfig, args) -> int:
    tables = load_tables(config)
    estimator = _zerocard_estimator(config, tables)
    with _ServeServer(("127.0.0.1", args.port), _ServeHandler) as server:
        server.estimator = estimator
        print(json.dumps({"listening": server.server_address[1]}), flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zerocard", description=__doc__)
    parser.add_argument("--config", help="JSON config path (or set ZEROCARD_CONFIG)")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--tables", help="directory of CSV table files")
    parser.add_argument("--schema", help="directory of sidecar schema JSON files")
    parser.add_argument("--embeddings", help="ZCEMB1 embedding store path")
    parser.add_argument("--model", help="ZCMDL1 model parameter path")
    parser.add_argument("--workload", help="JSONL workload path")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--out", help="output file (default: stdout/report path)")
        return p

    add("ingest", cmd_ingest)
    add("embed-stub", cmd_embed_stub)
    add("gen-queries", cmd_gen_queries)
    p_train = add("train", cmd_train)
    p_train.add_argument("--ablation", choices=ABLATIONS)
    p_est = add("estimate", cmd_estimate)
    p_est.add_argument("--query", help="JSON query object")
    p_eval = add("eval", cmd_eval)
    p_eval.add_argument("--method", help=f"comma list from {METHODS}")
    p_eval.add_argument("--sample-rate", type=float, dest="sample_rate")
    p_serve = add("serve", cmd_serve)
    p_serve.add_argument("--port", type=int, default=0)
    return parser


def _apply_overrides(config: RunConfig, args) -> None:
    if args.seed is not None:
        config.seed = args.seed
    for attr, flag in (
        ("tables_dir", "tables"),
        ("schema_dir", "schema"),
        ("embeddings", "embeddings"),
        ("model", "model"),
        ("workload", "workload"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attr, value)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config)
        _apply_overrides(config, args)
        return args.fn(config, args)
    except (ZeroCardError, FileNotFoundError) as e:
        name = type(e).__name__
        if isinstance(e, FileNotFoundError):
            name = "FileNotFound"
        print(json.dumps({"error": name, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
