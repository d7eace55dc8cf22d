#!/usr/bin/env python3
"""Desk-scale experiment: corpus -> workload -> train -> evaluate every method.

Generates a themed synthetic corpus, builds a stub-embedded workload with a
by-table train/holdout split, trains the estimator, and prints the held-out
comparison table (learned model, histogram heuristics, sampling, plus the
untrained model as a floor). Everything is seeded; two runs with the same
arguments produce the same numbers.

Example:
    python scripts/run_pipeline.py --tables 50 --queries 200 --epochs 40
"""

import argparse
import time

import numpy as np

from zerocard import evaluation, model as zm, synth, training as zt
from zerocard.estimators import (
    HistogramEstimator,
    SamplingEstimator,
    ZeroCardEstimator,
)
from zerocard.semantics import stub_store_for_tables


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tables", type=int, default=50)
    parser.add_argument("--queries", type=int, default=200, help="queries per table")
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--batch-size", type=int, default=256)
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--train-seed", type=int, default=3)
    parser.add_argument("--holdout", type=float, default=0.2)
    parser.add_argument("--sample-rate", type=float, default=0.01)
    parser.add_argument("--ablation", choices=("no-moe", "no-correlation", "no-dist"))
    parser.add_argument("--model-out", help="optionally save the trained parameters")
    args = parser.parse_args()

    t0 = time.perf_counter()
    tables = synth.generate_corpus(synth.CorpusSpec(n_tables=args.tables), seed=args.seed)
    tmap = {t.table_id: t for t in tables}
    store = stub_store_for_tables(tables, d=args.embed_dim, seed=0)
    queries = []
    for i, table in enumerate(tables):
        rng = np.random.default_rng(np.random.SeedSequence([99, i]))
        queries.extend(zt.generate_queries(table, args.queries, rng))
    train_q, hold_q = zt.split_by_table(queries, args.holdout, seed=5)
    print(f"corpus {len(tables)} tables, {len(queries)} queries "
          f"({len(train_q)} train / {len(hold_q)} holdout) in {time.perf_counter()-t0:.1f}s")

    hyper = zm.HyperParams(
        d=args.embed_dim, h=100, m=4, k=2, n_heads=2,
        expert_hidden=(64,), gate_hidden=(32,), est_hidden=(256, 128),
    )
    if args.ablation:
        hyper = hyper.ablated(args.ablation)
    examples = zt.build_training_examples(tmap, train_q, hyper.h, store)
    cfg = zt.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.train_seed)
    t0 = time.perf_counter()
    result = zt.train(examples, hyper, cfg)
    print(f"trained {args.epochs} epochs in {time.perf_counter()-t0:.1f}s; "
          f"loss {result.initial.total:.4f} -> {result.history[-1].total:.4f}")
    if args.model_out:
        zm.save_params(result.params, args.model_out)
        print(f"saved parameters to {args.model_out}")

    reports = []
    for est in (
        ZeroCardEstimator(result.params, tmap, store),
        HistogramEstimator("avi", tmap),
        HistogramEstimator("ebo", tmap),
        HistogramEstimator("minsel", tmap),
        SamplingEstimator(tmap, args.sample_rate, seed=args.train_seed),
    ):
        reports.append(evaluation.evaluate(est, hold_q))
    untrained = ZeroCardEstimator(zm.init_params(hyper, seed=args.train_seed), tmap, store)
    floor = evaluation.evaluate(untrained, hold_q)
    floor.method = "zerocard_untrained"
    reports.append(floor)
    print()
    print(evaluation.reports_to_table(reports))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
