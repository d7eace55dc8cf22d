"""Workload generation, the composite objective, and the optimizer loop.

The objective couples two tasks: a KL term pulling each predicted column
distribution toward the bucketed ground truth, and a squared error on
log-cardinality, weighted by beta. Gradients are computed analytically
through attention, the gated expert mixture (hard top-k: only selected
experts and their weights receive gradient), max pooling (routed to the
argmax element) and the estimator head; a central finite-difference helper
serves as the independent check in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as zmodel
from .distribution import (
    OPERATORS,
    Predicate,
    Query,
    column_distribution,
    column_predicate_vector,
    selectivity_oracle,
)
from .errors import (
    EmptyQuery,
    GenerationExhausted,
    InvalidCard,
    NonFiniteLoss,
    ShapeMismatch,
)
from .semantics import EmbeddingStore, serialize_column_text
from .tables import ColumnKind, TableHandle, sample_value

NUMERIC_OPS = OPERATORS  # <, >, =, <=, >=


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.1
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    eps_smooth: float = 1e-6

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingExample:
    """One query with all per-predicate features and its ground truth."""

    query: Query
    pvecs: np.ndarray  # (n, h)
    xs: np.ndarray  # (n, d)
    pi_true: np.ndarray  # (n, h)
    n_rows: int

    def __post_init__(self):
        if not (self.pvecs.shape[0] == self.xs.shape[0] == self.pi_true.shape[0]):
            raise ShapeMismatch("predicate feature lengths disagree")
        if self.query.true_card is None or self.query.true_card < 1:
            raise InvalidCard(f"training query needs true_card >= 1, got {self.query.true_card}")


# ---------------------------------------------------------------------------
# Workload generation
# ---------------------------------------------------------------------------

def generate_queries(
    table: TableHandle,
    count: int,
    rng: np.random.Generator,
    max_predicates: int = 8,
    max_selectivity: float = 0.9,
    attempt_budget: int | None = None,
) -> list[Query]:
    """Randomly generated conjunctive queries with oracle ground truth.

    Predicate count is uniform in [1, min(cap, #usable columns)]; columns
    are drawn without replacement; numerical operators uniformly from the
    five comparators, categorical predicates always '='; literals are
    sampled cells. Queries with zero cardinality or selectivity above the
    cap are discarded and regenerated.
    """
    eligible = [
        c for c in table.columns if table.n_rows > 0 and c.null_count < table.n_rows
    ]
    budget = attempt_budget if attempt_budget is not None else max(60 * count, 200)
    if not eligible:
        raise GenerationExhausted(requested=count, produced=0, budget=budget)
    out: list[Query] = []
    max_preds = min(max_predicates, len(eligible))
    attempts = 0
    while len(out) < count and attempts < budget:
        attempts += 1
        n_pred = int(rng.integers(1, max_preds + 1))
        chosen = rng.choice(len(eligible), size=n_pred, replace=False)
        preds = []
        for ci in chosen:
            col = eligible[int(ci)]
            literal = sample_value(table, col.column_id, rng)
            if col.kind is ColumnKind.NUMERICAL:
                op = NUMERIC_OPS[int(rng.integers(0, len(NUMERIC_OPS)))]
            else:
                op = "="
            preds.append(Predicate(col.column_id, op, literal))
        query = Query(table.table_id, tuple(preds))
        card = selectivity_oracle(table, query)
        if card == 0 or card > max_selectivity * table.n_rows:
            continue
        out.append(replace(query, true_card=card))
    if len(out) < count:
        raise GenerationExhausted(requested=count, produced=len(out), budget=budget)
    return out


def save_workload(queries: list[Query], path: str | Path) -> None:
    """One JSON object per line: table_id, predicates, true_card."""
    with open(path, "w", encoding="utf-8") as f:
        for q in queries:
            obj = {
                "table_id": q.table_id,
                "predicates": [
                    {"column": p.column_id, "op": p.op, "value": p.value}
                    for p in q.predicates
                ],
                "true_card": q.true_card,
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def load_workload(path: str | Path) -> list[Query]:
    queries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            preds = tuple(
                Predicate(p["column"], p["op"], p["value"]) for p in obj["predicates"]
            )
            queries.append(Query(obj["table_id"], preds, obj.get("true_card")))
    return queries


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------

def featurize_query(
    table: TableHandle,
    query: Query,
    h: int,
    store: EmbeddingStore,
    pi_cache: dict[str, np.ndarray] | None = None,
    with_ground_truth: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Per-predicate-column (p, x[, pi]) features in first-occurrence order.

    Multiple predicates on one column are conjoined into a single feature
    row. Embeddings are looked up by serialized column text and widened to
    float64.
    """
    groups: dict[str, list[Predicate]] = {}
    for pred in query.predicates:
        groups.setdefault(pred.column_id, []).append(pred)
    if not groups:
        raise EmptyQuery("a query needs at least one predicate")
    pvecs, xs, pis = [], [], []
    for column_id, preds in groups.items():
        col = table.column(column_id)
        pvecs.append(column_predicate_vector(table, column_id, preds, h))
        xs.append(store.lookup(serialize_column_text(col)).astype(np.float64))
        if with_ground_truth:
            if pi_cache is not None and column_id in pi_cache:
                pi = pi_cache[column_id]
            else:
                pi = column_distribution(table, column_id, h)
                if pi_cache is not None:
                    pi_cache[column_id] = pi
            pis.append(pi)
    return (
        np.stack(pvecs),
        np.stack(xs),
        np.stack(pis) if with_ground_truth else None,
    )


def build_training_examples(
    tables: dict[str, TableHandle],
    queries: list[Query],
    h: int,
    store: EmbeddingStore,
) -> list[TrainingExample]:
    """Featurize a workload; ground-truth distributions are cached per column."""
    caches: dict[str, dict[str, np.ndarray]] = {tid: {} for tid in tables}
    out = []
    for q in queries:
        table = tables[q.table_id]
        if q.true_card is not None and q.true_card > table.n_rows:
            raise InvalidCard(
                f"query on {q.table_id} claims true_card {q.true_card} > N={table.n_rows}"
            )
        pvecs, xs, pis = featurize_query(table, q, h, store, pi_cache=caches[q.table_id])
        out.append(TrainingExample(query=q, pvecs=pvecs, xs=xs, pi_true=pis, n_rows=table.n_rows))
    return out


def collate(examples: list[TrainingExample]) -> zmodel.BatchFeatures:
    segments = []
    start = 0
    for ex in examples:
        n = ex.pvecs.shape[0]
        segments.append((start, start + n))
        start += n
    return zmodel.BatchFeatures(
        pvecs=np.concatenate([ex.pvecs for ex in examples]),
        xs=np.concatenate([ex.xs for ex in examples]),
        segments=segments,
        log_n=np.array([np.log(ex.n_rows) for ex in examples]),
        n_rows=np.array([ex.n_rows for ex in examples], dtype=np.int64),
        pi_true=np.concatenate([ex.pi_true for ex in examples]),
        log_card=np.array([np.log(ex.query.true_card) for ex in examples]),
    )


def split_by_table(queries: list[Query], holdout_fraction: float, seed: int):
    """Partition queries so that no table contributes to both sides."""
    table_ids = sorted({q.table_id for q in queries})
    rng = np.random.default_rng(np.random.PCG64(seed))
    perm = rng.permutation(len(table_ids))
    n_hold = max(1, int(round(holdout_fraction * len(table_ids)))) if len(table_ids) > 1 else 0
    held = {table_ids[i] for i in perm[:n_hold]}
    train = [q for q in queries if q.table_id not in held]
    hold = [q for q in queries if q.table_id in held]
    return train, hold


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def smooth_target(pi: np.ndarray, eps_smooth: float) -> np.ndarray:
    """Additive smoothing so empty buckets stay inside the KL's domain."""
    h = pi.shape[-1]
    return (pi + eps_smooth) / (1.0 + h * eps_smooth)


def kl_loss(pi_hat: np.ndarray, pi: np.ndarray, eps_smooth: float = 1e-6) -> float:
    """KL divergence from the smoothed target to the prediction.

    Direction: sum_j pi_hat(j) * ln(pi_hat(j) / smoothed pi(j)). The
    prediction must be strictly positive (softmax output); only the ground
    truth is smoothed.
    """
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if pi_hat.shape != pi.shape:
        raise ShapeMismatch(f"{pi_hat.shape} vs {pi.shape}")
    pi_s = smooth_target(pi, eps_smooth)
    return float(np.sum(pi_hat * (np.log(pi_hat) - np.log(pi_s)), axis=-1).mean())


def card_loss(y_hat, true_card) -> float:
    """Squared error in natural-log space, averaged over the batch.

    Computed on the pre-clamp prediction: clamping is an inference-time
    guarantee and would zero the gradient at the bounds.
    """
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=np.float64))
    true_card = np.atleast_1d(np.asarray(true_card, dtype=np.float64))
    if np.any(true_card < 1):
        raise InvalidCard("true_card must be >= 1")
    return float(((y_hat - np.log(true_card)) ** 2).mean())


def composite_loss(
    examples: list[TrainingExample],
    params: zmodel.ModelParams,
    config: TrainConfig,
) -> tuple[float, float, float]:
    """(total, distribution term, cardinality term) on a batch."""
    feats = collate(examples)
    cache = zmodel.forward_queries(params, feats)
    return _losses_from_cache(cache, params.hyper, config)


def _losses_from_cache(
    cache: zmodel.ForwardCache, hyper: zmodel.HyperParams, config: TrainConfig
) -> tuple[float, float, float]:
    # Same formulas as card_loss/kl_loss, evaluated on the cached log-space
    # quantities so the analytic gradient differentiates exactly this value.
    l_card = float(((cache.y_hat - cache.feats.log_card) ** 2).mean())
    if not hyper.use_dist:
        return l_card, 0.0, l_card
    pi_s = smooth_target(cache.feats.pi_true, config.eps_smooth)
    l_dist = float(
        np.sum(cache.pi_hat * (np.log(cache.pi_hat) - np.log(pi_s)), axis=-1).mean()
    )
    return l_dist + config.beta * l_card, l_dist, l_card


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _mlp_backward(
    params: zmodel.ModelParams,
    prefix: str,
    cache: zmodel.MLPCache,
    d_out: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Accumulate MLP parameter gradients; returns gradient at the input."""
    n_layers = len(cache.pre)
    cur = d_out
    for i in range(n_layers - 1, -1, -1):
        if i != n_layers - 1:
            cur = cur * (cache.pre[i] > 0.0)
        grads[f"{prefix}.w{i}"] += cache.inputs[i].T @ cur
        grads[f"{prefix}.b{i}"] += cur.sum(axis=0)
        cur = cur @ params.tensors[f"{prefix}.w{i}"].T
    return cur


def _softmax_backward_rows(softmax_out: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    inner = (d_out * softmax_out).sum(axis=-1, keepdims=True)
    return softmax_out * (d_out - inner)


def _moe_backward(
    params: zmodel.ModelParams,
    cache: zmodel.MoECache,
    d_out: np.ndarray,
    grads: dict[str, np.ndarray],
    global_set: bool = False,
) -> np.ndarray:
    """Backward through the expert mixture; hard top-k gating.

    Unselected experts receive no gradient; the gate receives gradient only
    through the selected weights (softmax coupling then spreads it across
    all logits).
    """
    hyper = params.hyper
    own_set = global_set and not hyper.share_fusion_moe
    prefixes = zmodel._expert_prefixes(hyper, global_set=own_set)
    t = cache.x.shape[0]
    d_x = np.zeros_like(cache.x)
    if not hyper.use_moe:
        return _mlp_backward(params, prefixes[0], cache.experts[0], d_out, grads)
    rows = np.arange(t)
    sel_mask = np.zeros((t, hyper.m), dtype=bool)
    for j in range(hyper.k):
        sel_mask[rows, cache.selected[:, j]] = True
    d_alpha = np.zeros_like(cache.alpha)
    for i in range(hyper.m):
        mask = sel_mask[:, i]
        if not mask.any():
            continue
        w = np.where(mask, cache.alpha[:, i], 0.0)
        d_expert = w[:, None] * d_out
        d_x += _mlp_backward(params, prefixes[i], cache.experts[i], d_expert, grads)
        d_alpha[:, i] = np.where(
            mask, np.einsum("th,th->t", d_out, cache.experts[i].out), 0.0
        )
    d_logits = _softmax_backward_rows(cache.alpha, d_alpha)
    gate_prefix = "ggate" if own_set else "gate"
    d_x += _mlp_backward(params, gate_prefix, cache.gate, d_logits, grads)
    return d_x


def _attention_backward(
    params: zmodel.ModelParams,
    cache: zmodel.AttnCache,
    segments: list[tuple[int, int]],
    d_out: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    hyper = params.hyper
    H = hyper.n_heads
    dh = hyper.d // H
    scale = 1.0 / np.sqrt(dh)
    grads["attn.wo"] += cache.concat.T @ d_out
    d_concat = d_out @ params.tensors["attn.wo"].T
    d_q = np.zeros_like(cache.q)
    d_k = np.zeros_like(cache.k)
    d_v = np.zeros_like(cache.v)
    for (s, e), a in zip(segments, cache.attn):
        n = e - s
        d_ctx = d_concat[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        kr = cache.k[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        qr = cache.q[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        vr = cache.v[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        d_a = d_ctx @ vr.transpose(0, 2, 1)
        d_vr = a.transpose(0, 2, 1) @ d_ctx
        d_scores = _softmax_backward_rows(a, d_a)
        d_qr = d_scores @ kr * scale
        d_kr = d_scores.transpose(0, 2, 1) @ qr * scale
        d_q[s:e] = d_qr.transpose(1, 0, 2).reshape(n, H * dh)
        d_k[s:e] = d_kr.transpose(1, 0, 2).reshape(n, H * dh)
        d_v[s:e] = d_vr.transpose(1, 0, 2).reshape(n, H * dh)
    grads["attn.wq"] += cache.x.T @ d_q
    grads["attn.wk"] += cache.x.T @ d_k
    grads["attn.wv"] += cache.x.T @ d_v
    return (
        d_q @ params.tensors["attn.wq"].T
        + d_k @ params.tensors["attn.wk"].T
        + d_v @ params.tensors["attn.wv"].T
    )


def loss_and_gradients(
    params: zmodel.ModelParams,
    feats: zmodel.BatchFeatures,
    config: TrainConfig,
) -> tuple[tuple[float, float, float], dict[str, np.ndarray]]:
    """Composite loss and its analytic gradient for one collated batch."""
    hyper = params.hyper
    cache = zmodel.forward_queries(params, feats)
    losses = _losses_from_cache(cache, hyper, config)
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    b = feats.n_queries
    t = feats.n_predicates
    card_scale = config.beta if hyper.use_dist else 1.0
    d_y = card_scale * 2.0 * (cache.y_hat - feats.log_card) / b
    d_est_in = _mlp_backward(params, "est", cache.est, d_y[:, None], grads)
    d_pool = d_est_in[:, : hyper.encoding_dim]

    d_feat_x = np.zeros_like(feats.xs)
    d_match = None
    cols_d = np.arange(hyper.d)
    for qi in range(b):
        np.add.at(
            d_feat_x, (cache.pool.argmax_x[qi], cols_d), d_pool[qi, hyper.h : hyper.h + hyper.d]
        )
    d_pi_hat = np.zeros((t, hyper.h)) if hyper.use_dist else None
    if hyper.use_dist and hyper.append_match_fraction:
        d_match = np.zeros(t)
        np.add.at(d_match, cache.pool.argmax_match, d_pool[:, hyper.h + hyper.d])
        d_pi_hat += d_match[:, None] * feats.pvecs

    d_x = np.zeros_like(feats.xs)
    d_x_prime = np.zeros_like(feats.xs)
    if hyper.use_correlation:
        d_x_prime += d_feat_x
    else:
        d_x += d_feat_x

    if hyper.use_dist:
        pi_s = smooth_target(feats.pi_true, config.eps_smooth)
        d_pi_hat += (np.log(cache.pi_hat) - np.log(pi_s) + 1.0) / t
        d_logits = _softmax_backward_rows(cache.pi_hat, d_pi_hat)
        d_x += _moe_backward(params, cache.moe_local, d_logits, grads)
        d_x_prime += _moe_backward(params, cache.moe_global, d_logits, grads, global_set=True)

    if hyper.uses_attention:
        d_x += _attention_backward(params, cache.attn, feats.segments, d_x_prime, grads)
    return losses, grads


# ---------------------------------------------------------------------------
# Optimizer loop
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    total: float
    dist: float
    card: float


@dataclass
class TrainResult:
    params: zmodel.ModelParams
    initial: EpochStats
    history: list[EpochStats] = field(default_factory=list)


def train(
    examples: list[TrainingExample],
    hyper: zmodel.HyperParams,
    config: TrainConfig,
    init_seed: int | None = None,
) -> TrainResult:
    """Minibatch Adam over shuffled epochs; bitwise deterministic in the seeds.

    Per-epoch statistics are example-weighted means of the batch losses;
    the pre-training loss over the full corpus is recorded separately as
    the starting point.
    """
    if not examples:
        raise ValueError("training corpus is empty")
    params = zmodel.init_params(hyper, config.seed if init_seed is None else init_seed)
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    m_state = {n: np.zeros_like(p) for n, p in params.tensors.items()}
    v_state = {n: np.zeros_like(p) for n, p in params.tensors.items()}
    step = 0
    initial = EpochStats(*composite_loss(examples, params, config))
    history: list[EpochStats] = []
    n = len(examples)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        dist_sum = card_sum = 0.0
        n_preds = n_examples = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch = [examples[i] for i in perm[start : start + config.batch_size]]
            feats = collate(batch)
            (total, l_dist, l_card), grads = loss_and_gradients(params, feats, config)
            if not np.isfinite(total):
                raise NonFiniteLoss(epoch=epoch, batch_index=bi)
            step += 1
            bias1 = 1.0 - config.adam_beta1**step
            bias2 = 1.0 - config.adam_beta2**step
            for name in params.tensors:
                g = grads[name]
                m_state[name] = config.adam_beta1 * m_state[name] + (1 - config.adam_beta1) * g
                v_state[name] = config.adam_beta2 * v_state[name] + (1 - config.adam_beta2) * g * g
                params.tensors[name] -= (
                    config.learning_rate
                    * (m_state[name] / bias1)
                    / (np.sqrt(v_state[name] / bias2) + config.adam_eps)
                )
            dist_sum += l_dist * feats.n_predicates
            card_sum += l_card * feats.n_queries
            n_preds += feats.n_predicates
            n_examples += feats.n_queries
        # Weighted so the epoch statistics equal the corpus-level means and
        # are invariant to the shuffle order.
        dist = dist_sum / n_preds
        card = card_sum / n_examples
        total = dist + config.beta * card if hyper.use_dist else card
        history.append(EpochStats(total=total, dist=dist, card=card))
    return TrainResult(params=params, initial=initial, history=history)


# ---------------------------------------------------------------------------
# Finite differences (verification oracle; tests only)
# ---------------------------------------------------------------------------

def finite_diff_gradient(loss_at, params: zmodel.ModelParams, step: float = 1e-5):
    """Central-difference gradient of a scalar loss in every tensor entry."""
    grads = {}
    for name, tensor in params.tensors.items():
        g = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss_at(params)
            tensor[idx] = orig - step
            down = loss_at(params)
            tensor[idx] = orig
            g[idx] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads
