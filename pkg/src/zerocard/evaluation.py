"""q-error accounting, failure tracking, and per-method reports.

An estimate of 0 is a failure: it makes q-error undefined and is counted
separately, never folded into the error statistics. Quantiles use the
nearest-rank definition on the sorted non-failure q-errors.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from .errors import EmptyWorkload, Undefined

QUANTILES = (50, 75, 90, 95, 99)


def q_error(estimate: float, true_card: float) -> float:
    """max(true/est, est/true); symmetric, >= 1, equal to 1 iff exact."""
    if estimate == 0:
        raise Undefined("q-error is undefined for a zero estimate; record a failure")
    if estimate < 1 or true_card < 1:
        raise ValueError(f"q_error needs estimate >= 1 and true_card >= 1, got {estimate}, {true_card}")
    return max(true_card / estimate, estimate / true_card)


@dataclass(frozen=True)
class EstimateRecord:
    query_id: int
    true_card: int
    estimate: int
    elapsed_s: float = 0.0

    @property
    def failed(self) -> bool:
        return self.estimate == 0


@dataclass
class EvalReport:
    method: str
    n_queries: int
    n_failures: int
    failure_rate: float
    mean: float | None
    max: float | None
    quantiles: dict[int, float] = field(default_factory=dict)
    inference_time_s: float = 0.0
    build_time_s: float = 0.0
    model_size_bytes: int = 0

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "n_queries": self.n_queries,
            "n_failures": self.n_failures,
            "failure_rate": self.failure_rate,
            "mean_q_error": self.mean,
            "max_q_error": self.max,
            "q_error_quantiles": {str(k): v for k, v in self.quantiles.items()},
            "inference_time_s": self.inference_time_s,
            "build_time_s": self.build_time_s,
            "model_size_bytes": self.model_size_bytes,
        }


def nearest_rank(sorted_values: list[float], percentile: int) -> float:
    """Value at rank ceil(p*n/100) of an ascending list (1-based)."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("empty sample")
    rank = max(1, -(-percentile * n // 100))
    return sorted_values[rank - 1]


def summarize(
    method: str,
    records: list[EstimateRecord],
    model_size_bytes: int = 0,
    build_time_s: float = 0.0,
) -> EvalReport:
    """Aggregate records into a report; failures are excluded from errors."""
    if not records:
        raise EmptyWorkload(f"no records for method {method!r}")
    failures = sum(1 for r in records if r.failed)
    errors = sorted(q_error(r.estimate, r.true_card) for r in records if not r.failed)
    quantiles = {p: nearest_rank(errors, p) for p in QUANTILES} if errors else {}
    return EvalReport(
        method=method,
        n_queries=len(records),
        n_failures=failures,
        failure_rate=failures / len(records),
        mean=(sum(errors) / len(errors)) if errors else None,
        max=errors[-1] if errors else None,
        quantiles=quantiles,
        inference_time_s=sum(r.elapsed_s for r in records),
        build_time_s=build_time_s,
        model_size_bytes=model_size_bytes,
    )


class Estimator:
    """Interface the harness drives: a name, a per-query estimate, a size."""

    name = "estimator"

    def estimate(self, query) -> int:  # pragma: no cover - interface
        raise NotImplementedError

    def size_bytes(self) -> int:
        return 0

    def build_time_s(self) -> float:
        return 0.0


def evaluate(estimator: Estimator, workload) -> EvalReport:
    """Run every query through the estimator, timing each call.

    Timing covers feature extraction and estimation; one-time structure
    builds are the estimator's concern and reported separately.
    """
    if not workload:
        raise EmptyWorkload("evaluate called with no queries")
    records = []
    for qid, query in enumerate(workload):
        t0 = time.perf_counter()
        est = estimator.estimate(query)
        dt = time.perf_counter() - t0
        records.append(
            EstimateRecord(query_id=qid, true_card=query.true_card, estimate=int(est), elapsed_s=dt)
        )
    return summarize(
        estimator.name,
        records,
        model_size_bytes=estimator.size_bytes(),
        build_time_s=estimator.build_time_s(),
    )


def reports_to_json(reports: list[EvalReport]) -> str:
    return json.dumps([r.to_json_dict() for r in reports], indent=2, sort_keys=True)


def reports_to_table(reports: list[EvalReport]) -> str:
    """Aligned text table, one row per method."""
    headers = ["method", "fail%", "mean", "max", *(f"p{p}" for p in QUANTILES), "time_s", "bytes"]
    rows = []
    for r in reports:
        def fmt(x):
            return "-" if x is None else f"{x:.2f}"

        rows.append(
            [
                r.method,
                f"{100.0 * r.failure_rate:.2f}",
                fmt(r.mean),
                fmt(r.max),
                *(fmt(r.quantiles.get(p)) for p in QUANTILES),
                f"{r.inference_time_s:.2f}",
                str(r.model_size_bytes),
            ]
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)
