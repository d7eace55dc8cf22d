"""The estimator network and its parameter container.

Architecture per query: each predicate column contributes a semantic
embedding x and a bucket-coverage vector p. Multi-head self-attention over
the embeddings of the query's predicate columns yields context vectors x'.
A gated mixture of expert MLPs maps x (local) and x' (global) to latent
distributions whose sum is softmaxed into the predicted column distribution.
Query encoding is a masked componentwise max over the per-predicate
concatenations p||x', and an MLP head maps the pooled encoding plus ln(N)
to a log-cardinality, exponentiated and clamped to [1, N] at inference.

Everything runs in float64. All forward functions are pure; batched
variants return explicit caches consumed by the training module's backward
pass.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyQuery,
    FormatError,
    ShapeMismatch,
    TooManyPredicates,
    VersionMismatch,
)

MODEL_MAGIC = b"ZCMDL1\n"
MODEL_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    """All structural knobs of the network."""

    d: int = 384
    h: int = 100
    m: int = 4
    k: int = 2
    n_heads: int = 4
    max_predicates: int = 8
    expert_hidden: tuple[int, ...] = (256,)
    gate_hidden: tuple[int, ...] = (64,)
    est_hidden: tuple[int, ...] = (512, 256)
    use_moe: bool = True
    use_correlation: bool = True
    use_dist: bool = True
    share_fusion_moe: bool = True
    append_match_fraction: bool = False

    def __post_init__(self):
        object.__setattr__(self, "expert_hidden", tuple(self.expert_hidden))
        object.__setattr__(self, "gate_hidden", tuple(self.gate_hidden))
        object.__setattr__(self, "est_hidden", tuple(self.est_hidden))
        if self.d < 1 or self.h < 1:
            raise ValueError("d and h must be >= 1")
        if not (1 <= self.k <= self.m):
            raise ValueError(f"need 1 <= k <= m, got k={self.k}, m={self.m}")
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.max_predicates < 1:
            raise ValueError("max_predicates must be >= 1")

    @property
    def uses_attention(self) -> bool:
        return self.use_correlation or self.use_dist

    @property
    def n_experts(self) -> int:
        return self.m if self.use_moe else 1

    @property
    def active_experts(self) -> int:
        return self.k if self.use_moe else 1

    @property
    def encoding_dim(self) -> int:
        extra = 1 if (self.append_match_fraction and self.use_dist) else 0
        return self.h + self.d + extra

    def ablated(self, name: str) -> "HyperParams":
        """Apply one named ablation switch."""
        flags = {
            "no-moe": {"use_moe": False},
            "no-correlation": {"use_correlation": False},
            "no-dist": {"use_dist": False},
        }
        if name not in flags:
            raise ValueError(f"unknown ablation {name!r}; pick from {sorted(flags)}")
        return replace(self, **flags[name])


def _mlp_sizes(fan_in: int, hidden: tuple[int, ...], fan_out: int) -> list[int]:
    return [fan_in, *hidden, fan_out]


def _expert_prefixes(hyper: HyperParams, global_set: bool = False) -> list[str]:
    tag = "gexpert" if global_set else "expert"
    return [f"{tag}{i}" for i in range(hyper.n_experts)]


def tensor_manifest(hyper: HyperParams) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list for a hyperparameter setting."""
    out: list[tuple[str, tuple[int, ...]]] = []

    def mlp(prefix: str, sizes: list[int]):
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            out.append((f"{prefix}.w{i}", (fi, fo)))
            out.append((f"{prefix}.b{i}", (fo,)))

    d, h = hyper.d, hyper.h
    if hyper.uses_attention:
        for name in ("wq", "wk", "wv", "wo"):
            out.append((f"attn.{name}", (d, d)))
    if hyper.use_dist:
        for prefix in _expert_prefixes(hyper):
            mlp(prefix, _mlp_sizes(d, hyper.expert_hidden, h))
        if hyper.use_moe:
            mlp("gate", _mlp_sizes(d, hyper.gate_hidden, hyper.m))
        if not hyper.share_fusion_moe:
            for prefix in _expert_prefixes(hyper, global_set=True):
                mlp(prefix, _mlp_sizes(d, hyper.expert_hidden, h))
            if hyper.use_moe:
                mlp("ggate", _mlp_sizes(d, hyper.gate_hidden, hyper.m))
    mlp("est", _mlp_sizes(hyper.encoding_dim + 1, hyper.est_hidden, 1))
    return out


@dataclass
class ModelParams:
    """All learnable tensors, keyed by the canonical manifest names."""

    hyper: HyperParams
    tensors: dict[str, np.ndarray] = field(repr=False)

    def validate(self) -> None:
        expected = tensor_manifest(self.hyper)
        names = [n for n, _ in expected]
        if list(self.tensors.keys()) != names:
            raise ShapeMismatch(
                f"tensor set {sorted(self.tensors)} does not match manifest {sorted(names)}"
            )
        for name, shape in expected:
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise ShapeMismatch(f"{name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ShapeMismatch(f"{name}: contains non-finite values")


def init_params(hyper: HyperParams, seed: int) -> ModelParams:
    """Fan-in scaled uniform initialization, deterministic in the seed."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_manifest(hyper):
        fan_in = shape[0] if len(shape) == 2 else _bias_fan_in(hyper, name)
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(hyper=hyper, tensors=tensors)


def _bias_fan_in(hyper: HyperParams, bias_name: str) -> int:
    # Bias bound follows its layer's weight fan-in.
    weight_name = bias_name.replace(".b", ".w")
    for name, shape in tensor_manifest(hyper):
        if name == weight_name:
            return shape[0]
    raise KeyError(bias_name)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MLPCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    out: np.ndarray


def mlp_forward(params: ModelParams, prefix: str, x: np.ndarray) -> MLPCache:
    """ReLU-hidden, linear-output MLP over row vectors."""
    inputs = []
    pres = []
    cur = x
    i = 0
    while f"{prefix}.w{i}" in params.tensors:
        w = params.tensors[f"{prefix}.w{i}"]
        b = params.tensors[f"{prefix}.b{i}"]
        inputs.append(cur)
        pre = cur @ w + b
        pres.append(pre)
        last = f"{prefix}.w{i + 1}" not in params.tensors
        cur = pre if last else _relu(pre)
        i += 1
    return MLPCache(inputs=inputs, pre=pres, out=cur)


@dataclass
class AttnCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: list[np.ndarray]  # per query: (H, n, n) row-softmax matrices
    concat: np.ndarray
    out: np.ndarray


def attention_forward(
    params: ModelParams, x: np.ndarray, segments: list[tuple[int, int]]
) -> AttnCache:
    """Multi-head self-attention within each query segment.

    Scores are scaled by sqrt(d/H) per head; no residual connection or
    layer normalization follows the output projection.
    """
    hyper = params.hyper
    H = hyper.n_heads
    dh = hyper.d // H
    scale = 1.0 / np.sqrt(dh)
    q = x @ params.tensors["attn.wq"]
    k = x @ params.tensors["attn.wk"]
    v = x @ params.tensors["attn.wv"]
    concat = np.empty_like(x)
    attn: list[np.ndarray] = []
    for s, e in segments:
        n = e - s
        qr = q[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        kr = k[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        vr = v[s:e].reshape(n, H, dh).transpose(1, 0, 2)
        scores = qr @ kr.transpose(0, 2, 1) * scale
        a = _softmax_rows(scores)
        ctx = a @ vr  # (H, n, dh)
        concat[s:e] = ctx.transpose(1, 0, 2).reshape(n, H * dh)
        attn.append(a)
    out = concat @ params.tensors["attn.wo"]
    return AttnCache(x=x, q=q, k=k, v=v, attn=attn, concat=concat, out=out)


def mhsa_forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Self-attention over one query's n x d embedding matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.hyper.d:
        raise ShapeMismatch(f"expected (*, {params.hyper.d}), got {x.shape}")
    return attention_forward(params, x, [(0, x.shape[0])]).out


@dataclass
class MoECache:
    x: np.ndarray
    gate: MLPCache | None
    alpha: np.ndarray  # (T, m)
    selected: np.ndarray  # (T, k) int
    experts: list[MLPCache]
    out: np.ndarray  # (T, h)


def moe_forward_batch(params: ModelParams, x: np.ndarray, global_set: bool = False) -> MoECache:
    """Gated top-k expert mixture over a batch of row vectors.

    The top-k weights are taken from the full softmax without
    renormalization; ties select the lower expert index. With use_moe off
    this degenerates to the single shared MLP.
    """
    hyper = params.hyper
    own_set = global_set and not hyper.share_fusion_moe
    prefixes = _expert_prefixes(hyper, global_set=own_set)
    experts = [mlp_forward(params, p, x) for p in prefixes]
    t = x.shape[0]
    if not hyper.use_moe:
        alpha = np.ones((t, 1), dtype=np.float64)
        selected = np.zeros((t, 1), dtype=np.int64)
        return MoECache(x=x, gate=None, alpha=alpha, selected=selected,
                        experts=experts, out=experts[0].out)
    gate_prefix = "ggate" if own_set else "gate"
    gate = mlp_forward(params, gate_prefix, x)
    alpha = _softmax_rows(gate.out)
    selected = np.argsort(-alpha, axis=1, kind="stable")[:, : hyper.k]
    out = np.zeros((t, hyper.h), dtype=np.float64)
    rows = np.arange(t)
    for j in range(hyper.k):
        idx = selected[:, j]
        w = alpha[rows, idx]
        for i in range(hyper.m):
            mask = idx == i
            if mask.any():
                out[mask] += w[mask, None] * experts[i].out[mask]
    return MoECache(x=x, gate=gate, alpha=alpha, selected=selected, experts=experts, out=out)


def moe_forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Single-vector expert mixture: (latent distribution, weights, active set)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.hyper.d,):
        raise ShapeMismatch(f"expected ({params.hyper.d},), got {x.shape}")
    cache = moe_forward_batch(params, x[None, :])
    return cache.out[0], cache.alpha[0], [int(i) for i in cache.selected[0]]


def fuse_distributions(d_local: np.ndarray, d_global: np.ndarray) -> np.ndarray:
    """Softmax of the summed local and global latent distributions."""
    if d_local.shape != d_global.shape:
        raise ShapeMismatch(f"{d_local.shape} vs {d_global.shape}")
    return _softmax_rows(np.atleast_2d(d_local + d_global))[0] if d_local.ndim == 1 else _softmax_rows(d_local + d_global)


def predict_distribution(params: ModelParams, x: np.ndarray, x_prime: np.ndarray) -> np.ndarray:
    """Predicted column distribution from a local and a context embedding."""
    d_local, _, _ = moe_forward(params, x)
    cache = moe_forward_batch(params, np.asarray(x_prime, dtype=np.float64)[None, :], global_set=True)
    return fuse_distributions(d_local, cache.out[0])


@dataclass
class PoolCache:
    argmax_p: np.ndarray  # (B, h) global row index feeding each component
    argmax_x: np.ndarray  # (B, d)
    argmax_match: np.ndarray | None  # (B,)
    pooled: np.ndarray  # (B, encoding_dim)


def pool_queries(
    hyper: HyperParams,
    pvecs: np.ndarray,
    feat_x: np.ndarray,
    segments: list[tuple[int, int]],
    match: np.ndarray | None,
) -> PoolCache:
    """Masked componentwise max over each query's predicate features."""
    b = len(segments)
    pooled = np.empty((b, hyper.encoding_dim), dtype=np.float64)
    argmax_p = np.empty((b, hyper.h), dtype=np.int64)
    argmax_x = np.empty((b, hyper.d), dtype=np.int64)
    argmax_match = np.empty(b, dtype=np.int64) if match is not None else None
    for qi, (s, e) in enumerate(segments):
        ap = s + np.argmax(pvecs[s:e], axis=0)
        ax = s + np.argmax(feat_x[s:e], axis=0)
        argmax_p[qi] = ap
        argmax_x[qi] = ax
        pooled[qi, : hyper.h] = pvecs[ap, np.arange(hyper.h)]
        pooled[qi, hyper.h : hyper.h + hyper.d] = feat_x[ax, np.arange(hyper.d)]
        if match is not None:
            am = s + int(np.argmax(match[s:e]))
            argmax_match[qi] = am
            pooled[qi, hyper.h + hyper.d] = match[am]
    return PoolCache(argmax_p=argmax_p, argmax_x=argmax_x, argmax_match=argmax_match, pooled=pooled)


def encode_query(hyper: HyperParams, predicates: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Componentwise max of p_i || x'_i over a query's real predicates.

    Equivalent to padding with minus infinity up to the predicate cap; the
    p part occupies the first h components.
    """
    if len(predicates) == 0:
        raise EmptyQuery("a query needs at least one predicate")
    if len(predicates) > hyper.max_predicates:
        raise TooManyPredicates(f"{len(predicates)} > cap {hyper.max_predicates}")
    pvecs = np.stack([np.asarray(p, dtype=np.float64) for p, _ in predicates])
    xs = np.stack([np.asarray(x, dtype=np.float64) for _, x in predicates])
    if pvecs.shape[1] != hyper.h or xs.shape[1] != hyper.d:
        raise ShapeMismatch(f"predicate features {pvecs.shape}/{xs.shape} vs h={hyper.h}, d={hyper.d}")
    return np.concatenate([pvecs.max(axis=0), xs.max(axis=0)])


@dataclass
class BatchFeatures:
    """Flattened per-predicate features for a batch of queries."""

    pvecs: np.ndarray  # (T, h)
    xs: np.ndarray  # (T, d)
    segments: list[tuple[int, int]]
    log_n: np.ndarray  # (B,)
    n_rows: np.ndarray  # (B,)
    pi_true: np.ndarray | None = None  # (T, h)
    log_card: np.ndarray | None = None  # (B,)

    @property
    def n_queries(self) -> int:
        return len(self.segments)

    @property
    def n_predicates(self) -> int:
        return self.pvecs.shape[0]


@dataclass
class ForwardCache:
    feats: BatchFeatures
    attn: AttnCache | None
    moe_local: MoECache | None
    moe_global: MoECache | None
    pi_hat: np.ndarray | None  # (T, h)
    match: np.ndarray | None  # (T,)
    pool: PoolCache
    est: MLPCache
    y_hat: np.ndarray  # (B,)


def forward_queries(params: ModelParams, feats: BatchFeatures) -> ForwardCache:
    """Full batched forward pass; caches every intermediate for backprop."""
    hyper = params.hyper
    if feats.pvecs.shape[1] != hyper.h or feats.xs.shape[1] != hyper.d:
        raise ShapeMismatch(
            f"features ({feats.pvecs.shape[1]}, {feats.xs.shape[1]}) vs (h={hyper.h}, d={hyper.d})"
        )
    for s, e in feats.segments:
        if e - s < 1:
            raise EmptyQuery("a query needs at least one predicate")
        if e - s > hyper.max_predicates:
            raise TooManyPredicates(f"{e - s} > cap {hyper.max_predicates}")
    attn = attention_forward(params, feats.xs, feats.segments) if hyper.uses_attention else None
    moe_local = moe_global = None
    pi_hat = None
    match = None
    if hyper.use_dist:
        moe_local = moe_forward_batch(params, feats.xs)
        moe_global = moe_forward_batch(params, attn.out, global_set=True)
        pi_hat = _softmax_rows(moe_local.out + moe_global.out)
        if hyper.append_match_fraction:
            match = np.einsum("th,th->t", feats.pvecs, pi_hat)
    feat_x = attn.out if hyper.use_correlation else feats.xs
    pool = pool_queries(hyper, feats.pvecs, feat_x, feats.segments, match)
    est_in = np.concatenate([pool.pooled, feats.log_n[:, None]], axis=1)
    est = mlp_forward(params, "est", est_in)
    return ForwardCache(
        feats=feats,
        attn=attn,
        moe_local=moe_local,
        moe_global=moe_global,
        pi_hat=pi_hat,
        match=match,
        pool=pool,
        est=est,
        y_hat=est.out[:, 0],
    )


def clamp_estimate(y_hat: float, n_rows: int) -> float:
    """Map a log-cardinality to the estimate range [1, N]."""
    return float(np.clip(np.exp(min(y_hat, 64.0)), 1.0, float(max(n_rows, 1))))


def estimate_cardinality(
    params: ModelParams,
    n_rows: int,
    predicates: list[tuple[np.ndarray, np.ndarray]],
) -> float:
    """Cardinality estimate for one query from (p, x) predicate features.

    Always lies in [1, N]: the estimator cannot produce the failure value 0.
    """
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    hyper = params.hyper
    if len(predicates) == 0:
        raise EmptyQuery("a query needs at least one predicate")
    if len(predicates) > hyper.max_predicates:
        raise TooManyPredicates(f"{len(predicates)} > cap {hyper.max_predicates}")
    pvecs = np.stack([np.asarray(p, dtype=np.float64) for p, _ in predicates])
    xs = np.stack([np.asarray(x, dtype=np.float64) for _, x in predicates])
    feats = BatchFeatures(
        pvecs=pvecs,
        xs=xs,
        segments=[(0, pvecs.shape[0])],
        log_n=np.array([np.log(n_rows)], dtype=np.float64),
        n_rows=np.array([n_rows], dtype=np.int64),
    )
    cache = forward_queries(params, feats)
    return clamp_estimate(cache.y_hat[0], n_rows)


def _hyper_to_json(hyper: HyperParams) -> dict:
    return asdict(hyper)


def _hyper_from_json(obj: dict) -> HyperParams:
    fields = dict(obj)
    for key in ("expert_hidden", "gate_hidden", "est_hidden"):
        if key in fields:
            fields[key] = tuple(fields[key])
    try:
        return HyperParams(**fields)
    except (TypeError, ValueError) as e:
        raise FormatError(f"invalid hyperparameters in header: {e}") from None


def params_to_bytes(params: ModelParams) -> bytes:
    """The versioned ZCMDL1 container (f64 little-endian, row-major)."""
    params.validate()
    manifest = [{"name": n, "shape": list(s)} for n, s in tensor_manifest(params.hyper)]
    header = json.dumps(
        {"version": MODEL_VERSION, "hyper": _hyper_to_json(params.hyper), "manifest": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<I", len(header))
    out += header
    for name, _ in tensor_manifest(params.hyper):
        out += np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes()
    return bytes(out)


def save_params(params: ModelParams, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path: str | Path) -> ModelParams:
    """Load a ZCMDL1 container; round-trips every tensor bit-exactly."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:7]!r}")
    off = len(MODEL_MAGIC)
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
    if header.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: version {header.get('version')!r}, supported {MODEL_VERSION}")
    hyper = _hyper_from_json(header.get("hyper", {}))
    expected = tensor_manifest(hyper)
    declared = [(m["name"], tuple(m["shape"])) for m in header.get("manifest", [])]
    if declared != expected:
        raise ShapeMismatch(f"{path}: manifest does not match hyperparameters")
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected:
        count = int(np.prod(shape))
        nbytes = 8 * count
        if len(blob) < off + nbytes:
            raise FormatError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(blob[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    params = ModelParams(hyper=hyper, tensors=tensors)
    params.validate()
    return params
