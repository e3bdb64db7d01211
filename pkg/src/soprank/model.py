"""Hierarchical set encoder that maps a policy's state-action pairs to a score.

Pipeline for one policy on one clustered state subset:

1. project every (state, action) pair to ``d_low``;
2. run the low-level encoder inside each cluster and average-pool to one
   vector per cluster (an empty cluster pools to zeros);
3. bridge-project the K cluster vectors to ``d_high``;
4. run the high-level encoder over the K cluster tokens and average-pool;
5. project to a scalar.

No positional information enters anywhere, so the score is invariant to the
order of pairs within a cluster and to the order of the clusters.

Policies that share a subset are scored together as one ``(M, ...)`` batch.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numgrad as ng
from .numgrad import Tensor
from .policy import PolicyRepresentation

__all__ = [
    "EncoderConfig",
    "ScorerConfig",
    "ScoringModel",
    "DropoutStream",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointCorruptError",
    "init_model",
    "encoder_layer",
    "mlp_layer",
    "cluster_members",
    "score",
    "score_mlp",
    "score_batch",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"SOPRT001"


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int
    n_heads: int
    d_ff: int
    dropout: float = 0.1


@dataclass(frozen=True)
class ScorerConfig:
    d_in: int
    d_low: int = 64
    d_high: int = 256
    low: EncoderConfig = EncoderConfig(2, 2, 128, 0.1)
    high: EncoderConfig = EncoderConfig(6, 8, 512, 0.1)
    K: int = 256
    variant: str = "transformer"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.variant not in ("transformer", "mlp"):
            raise ValueError(f"unknown scorer variant {self.variant!r}")
        if self.d_low % self.low.n_heads or self.d_high % self.high.n_heads:
            raise ValueError("model widths must be divisible by their head counts")
        if self.K < 1 or self.d_in < 1:
            raise ValueError("K and d_in must be positive")
        for enc in (self.low, self.high):
            if not 0.0 <= enc.dropout < 1.0:
                raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def toy(cls, d_in: int, K: int = 8, d_low: int = 16, d_high: int = 32, variant="transformer", dropout=0.1):
        """Desk-scale configuration used by the synthetic benchmark."""
        return cls(
            d_in=d_in,
            d_low=d_low,
            d_high=d_high,
            low=EncoderConfig(2, 2, 2 * d_low, dropout),
            high=EncoderConfig(2, 4, 2 * d_high, dropout),
            K=K,
            variant=variant,
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ScorerConfig":
        obj = dict(obj)
        obj["low"] = EncoderConfig(**obj["low"])
        obj["high"] = EncoderConfig(**obj["high"])
        return cls(**obj)


def _layer_shapes(prefix: str, d: int, d_ff: int, variant: str) -> list[tuple[str, tuple[int, ...]]]:
    if variant == "transformer":
        mix = []
        for n in "qkvo":
            mix += [(f"{prefix}.w{n}", (d, d)), (f"{prefix}.b{n}", (d,))]
    else:
        mix = [(f"{prefix}.wm", (d, d)), (f"{prefix}.bm", (d,))]
    return mix + [
        (f"{prefix}.ln1_g", (d,)),
        (f"{prefix}.ln1_b", (d,)),
        (f"{prefix}.w1", (d, d_ff)),
        (f"{prefix}.b1", (d_ff,)),
        (f"{prefix}.w2", (d_ff, d)),
        (f"{prefix}.b2", (d,)),
        (f"{prefix}.ln2_g", (d,)),
        (f"{prefix}.ln2_b", (d,)),
    ]


def param_shapes(cfg: ScorerConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list; a pure function of the config."""
    shapes = [("in.w", (cfg.d_in, cfg.d_low)), ("in.b", (cfg.d_low,))]
    for i in range(cfg.low.n_layers):
        shapes += _layer_shapes(f"low{i}", cfg.d_low, cfg.low.d_ff, cfg.variant)
    shapes += [("bridge.w", (cfg.d_low, cfg.d_high)), ("bridge.b", (cfg.d_high,))]
    for i in range(cfg.high.n_layers):
        shapes += _layer_shapes(f"high{i}", cfg.d_high, cfg.high.d_ff, cfg.variant)
    shapes += [("out.w", (cfg.d_high, 1)), ("out.b", (1,))]
    return shapes


@dataclass
class ScoringModel:
    config: ScorerConfig
    params: dict[str, Tensor]
    _layers: dict[str, dict[str, Tensor]] = field(default_factory=dict, init=False, repr=False, compare=False)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def layer(self, prefix: str) -> dict[str, Tensor]:
        if prefix not in self._layers:
            n = len(prefix) + 1
            self._layers[prefix] = {k[n:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}
        return self._layers[prefix]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            arr = np.array(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            arr.flags.writeable = False
            p.data = arr
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def init_model(cfg: ScorerConfig, seed: int = 0) -> ScoringModel:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr, requires_grad=True)
    return ScoringModel(cfg, params)


class DropoutStream:
    """One generator whose masks are shared by every element of a batch.

    Masks are drawn for a single batch element and broadcast, so policies
    scored together see identical draws and a policy's mask never depends on
    which other policies share its batch.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def mask(self, shape: tuple[int, ...], p: float) -> np.ndarray | None:
        if p == 0.0:
            return None
        return (self.rng.random(shape[1:], dtype=np.float32) >= p)[None]


def _drop(x: Tensor, stream: DropoutStream | None, p: float) -> Tensor:
    if stream is None:
        return x
    return ng.dropout(x, stream.mask(x.shape, p), p)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ng.matmul(x, w) + b


def _feed_forward_block(x, p, eps, stream, dropout):
    ff = _linear(ng.relu(_linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])
    return ng.layer_norm(x + _drop(ff, stream, dropout), p["ln2_g"], p["ln2_b"], eps)


def encoder_layer(
    x: Tensor,
    p: dict[str, Tensor],
    n_heads: int,
    *,
    stream: DropoutStream | None = None,
    dropout: float = 0.0,
    eps: float = 1e-5,
) -> Tensor:
    """Post-norm Transformer encoder layer; tokens run along axis -2 of ``x``."""
    d = x.shape[-1]
    if d % n_heads:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    if p["wq"].shape[0] != d:
        raise ng.ShapeError(f"layer width {p['wq'].shape[0]} != input width {d}")
    dh = d // n_heads
    lead, L = x.shape[:-2], x.shape[-2]

    def heads(t: Tensor) -> Tensor:
        return t.reshape(*lead, L, n_heads, dh).swapaxes(-3, -2)

    q = heads(_linear(x, p["wq"], p["bq"]))
    k = heads(_linear(x, p["wk"], p["bk"]))
    v = heads(_linear(x, p["wv"], p["bv"]))
    logits = ng.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    attn = _drop(ng.softmax(logits, axis=-1), stream, dropout)
    ctx = ng.matmul(attn, v).swapaxes(-3, -2).reshape(*lead, L, d)
    mixed = _linear(ctx, p["wo"], p["bo"])
    x = ng.layer_norm(x + _drop(mixed, stream, dropout), p["ln1_g"], p["ln1_b"], eps)
    return _feed_forward_block(x, p, eps, stream, dropout)


def mlp_layer(
    x: Tensor,
    p: dict[str, Tensor],
    *,
    stream: DropoutStream | None = None,
    dropout: float = 0.0,
    eps: float = 1e-5,
) -> Tensor:
    """Per-token counterpart of :func:`encoder_layer` (no cross-token mixing)."""
    mixed = ng.relu(_linear(x, p["wm"], p["bm"]))
    x = ng.layer_norm(x + _drop(mixed, stream, dropout), p["ln1_g"], p["ln1_b"], eps)
    return _feed_forward_block(x, p, eps, stream, dropout)


def cluster_members(cluster_of, K: int) -> list[np.ndarray]:
    cluster_of = np.asarray(cluster_of, dtype=np.int64).reshape(-1)
    if cluster_of.size and (cluster_of.min() < 0 or cluster_of.max() >= K):
        raise ValueError(f"cluster indices must lie in [0, {K})")
    return [np.flatnonzero(cluster_of == c) for c in range(K)]


def _run_stack(model, level: str, x: Tensor, enc: EncoderConfig, stream) -> Tensor:
    eps = model.config.ln_eps
    for i in range(enc.n_layers):
        p = model.layer(f"{level}{i}")
        if model.config.variant == "mlp":
            x = mlp_layer(x, p, stream=stream, dropout=enc.dropout, eps=eps)
        else:
            x = encoder_layer(x, p, enc.n_heads, stream=stream, dropout=enc.dropout, eps=eps)
    return x


def score_batch(
    model: ScoringModel,
    pairs: np.ndarray,
    cluster_of: np.ndarray,
    mode: str = "eval",
    stream: DropoutStream | None = None,
) -> Tensor:
    """Scores for M policies evaluated on one shared clustered subset.

    ``pairs`` is ``(M, n, d_in)`` and ``cluster_of`` gives each of the n
    pairs its cluster; returns a differentiable ``(M,)`` tensor.
    """
    cfg = model.config
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[2] != cfg.d_in:
        raise ng.ShapeError(f"pairs must be (M, n, {cfg.d_in}), got {pairs.shape}")
    if len(np.asarray(cluster_of).reshape(-1)) != pairs.shape[1]:
        raise ng.ShapeError(f"{pairs.shape[1]} pairs but {len(cluster_of)} cluster indices")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        stream = None
    elif stream is None:
        raise ValueError("train mode needs a dropout stream")
    M = pairs.shape[0]
    P = model.params
    members = cluster_members(cluster_of, cfg.K)
    h = _linear(Tensor(pairs, _check=False), P["in.w"], P["in.b"])
    empty = Tensor(np.zeros((M, cfg.d_low)), _check=False)
    if cfg.variant == "mlp":
        # per-token layers: run once over all pairs, then pool per cluster
        h = _run_stack(model, "low", h, cfg.low, stream)
        pooled = [h[:, idx].mean(axis=-2) if len(idx) else empty for idx in members]
    else:
        pooled = [
            _run_stack(model, "low", h[:, idx], cfg.low, stream).mean(axis=-2) if len(idx) else empty
            for idx in members
        ]
    z = _linear(ng.stack(pooled, axis=1), P["bridge.w"], P["bridge.b"])
    z = _run_stack(model, "high", z, cfg.high, stream)
    out = _linear(z.mean(axis=-2), P["out.w"], P["out.b"])
    return out.reshape(M)


def _score_one(model, rep: PolicyRepresentation, mode, rng) -> Tensor:
    if rep.K != model.config.K:
        raise ValueError(f"representation has K={rep.K}, model expects K={model.config.K}")
    stream = DropoutStream(rng) if mode == "train" and rng is not None else None
    if mode == "train" and stream is None:
        raise ValueError("train mode needs an rng for dropout")
    return score_batch(model, rep.pairs[None], rep.cluster_of, mode, stream).reshape(())


def score(model: ScoringModel, rep: PolicyRepresentation, mode: str = "eval", rng=None) -> Tensor:
    """Differentiable scalar score of one policy representation.

    ``rng`` (a ``numpy.random.Generator``) drives dropout in train mode and is
    ignored in eval mode.
    """
    return _score_one(model, rep, mode, rng)


def score_mlp(model: ScoringModel, rep: PolicyRepresentation, mode: str = "eval", rng=None) -> Tensor:
    if model.config.variant != "mlp":
        raise ValueError("score_mlp needs a model built with variant='mlp'")
    return _score_one(model, rep, mode, rng)


# -- checkpoints -------------------------------------------------------------


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


def save_checkpoint(model: ScoringModel, path, extra: dict | None = None) -> None:
    """Write magic, a length-prefixed JSON header, then the raw f64 blob."""
    blob = b"".join(
        np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in model.params.values()
    )
    header = {
        "config": model.config.to_json(),
        "params": [[k, list(p.shape)] for k, p in model.params.items()],
        "sha256": hashlib.sha256(blob).hexdigest(),
        "n_bytes": len(blob),
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)


def read_checkpoint_header(path) -> dict:
    return _read(path)[0]


def _read(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointCorruptError(f"{path}: file truncated")
    if raw[: len(MAGIC)] != MAGIC:
        if raw[:5] == MAGIC[:5]:
            raise CheckpointVersionError(f"{path}: unsupported checkpoint version {raw[:8]!r}")
        raise CheckpointCorruptError(f"{path}: not a scorer checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: header unreadable") from exc
    blob = raw[16 + hlen :]
    if len(blob) != header.get("n_bytes") or hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise CheckpointCorruptError(f"{path}: checksum mismatch (truncated or corrupted)")
    return header, blob


def load_checkpoint(path, expected_config: ScorerConfig | None = None) -> ScoringModel:
    header, blob = _read(path)
    cfg = ScorerConfig.from_json(header["config"])
    if expected_config is not None and expected_config != cfg:
        raise CheckpointVersionError(f"{path}: stored config differs from the expected config")
    expected = [[k, list(s)] for k, s in param_shapes(cfg)]
    if header["params"] != expected:
        raise CheckpointVersionError(f"{path}: stored parameter shapes do not match the config")
    flat = np.frombuffer(blob, dtype="<f8")
    params, offset = {}, 0
    for name, shape in param_shapes(cfg):
        n = int(np.prod(shape))
        params[name] = Tensor(flat[offset : offset + n].reshape(shape).astype(np.float64), requires_grad=True)
        offset += n
    return ScoringModel(cfg, params)
