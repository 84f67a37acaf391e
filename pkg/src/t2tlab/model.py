"""The transformer: four architecture variants over one set of blocks.

Blocks are pre-norm (rms norm feeds each subcomponent, residual adds the
subcomponent output), attention logits carry a learned per-head bucketed
relative-position bias shared across all layers of a stack, and the
output projection reuses the input embedding matrix.

Variants:
  encoder_decoder         two stacks, cross-attention, causal decoder
  encoder_decoder_shared  same wiring, encoder/decoder share self-attn,
                          ffn and norm parameters (cross-attn stays own)
  decoder_lm              one stack, causal mask over the whole sequence
  prefix_lm               one stack, fully-visible prefix + causal tail
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, ParameterError
from .rng import Rng

ARCHITECTURES = ("encoder_decoder", "encoder_decoder_shared", "decoder_lm", "prefix_lm")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    d_ff: int
    d_kv: int
    num_heads: int
    num_layers: int  # per stack
    vocab_size: int
    dropout_rate: float = 0.1
    num_rel_buckets: int = 32
    rel_max_distance: int = 128
    architecture: str = "encoder_decoder"
    dtype: str = "float64"
    scale_attention_logits: bool = False
    adapter_dim: int | None = None
    pad_id: int = 0
    eos_id: int = 1

    def __post_init__(self):
        for name in ("d_model", "d_ff", "d_kv", "num_heads", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ParameterError("num_layers must be >= 0")
        if self.num_rel_buckets < 2:
            raise ParameterError("num_rel_buckets must be >= 2")
        if self.architecture not in ARCHITECTURES:
            raise ParameterError(f"unknown architecture {self.architecture!r}")

    @property
    def d_inner(self) -> int:
        return self.num_heads * self.d_kv

    @property
    def has_encoder(self) -> bool:
        return self.architecture in ("encoder_decoder", "encoder_decoder_shared")

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class MaskPattern:
    kind: str  # fully_visible | causal | causal_with_prefix
    prefix_len: int | None = None

    def __post_init__(self):
        if self.kind not in ("fully_visible", "causal", "causal_with_prefix"):
            raise ParameterError(f"unknown mask kind {self.kind!r}")
        if self.kind == "causal_with_prefix" and (self.prefix_len is None or self.prefix_len < 0):
            raise ParameterError("causal_with_prefix requires a non-negative prefix_len")


def build_mask(pattern: MaskPattern, length: int) -> np.ndarray:
    """Boolean [length, length]; True means position i may attend to j."""
    if length < 1:
        raise ParameterError(f"mask length must be >= 1, got {length}")
    if pattern.kind == "fully_visible":
        return np.ones((length, length), dtype=bool)
    rows = np.arange(length)[:, None]
    cols = np.arange(length)[None, :]
    causal = cols <= rows
    if pattern.kind == "causal":
        return causal
    if pattern.prefix_len > length:
        raise ParameterError(f"prefix_len {pattern.prefix_len} exceeds length {length}")
    return (cols < pattern.prefix_len) | causal


def relative_bucket(offset: int, bidirectional: bool, num_buckets: int = 32, max_distance: int = 128):
    """Map a signed key-minus-query offset to a bucket index.

    Bidirectional attention splits the buckets by sign; within each
    direction the first half of the buckets hold exact small offsets and
    the second half cover logarithmically growing ranges, with everything
    at or beyond max_distance pooled in the direction's last bucket.
    Unidirectional attention only ever sees the past, so positive
    (future) offsets fold to bucket 0. Accepts scalars or arrays.
    """
    if num_buckets < 4:
        raise ParameterError("num_buckets must be >= 4")
    if max_distance < 2:
        raise ParameterError("max_distance must be >= 2")
    offset = np.asarray(offset, dtype=np.int64)
    bucket = np.zeros_like(offset)
    n = num_buckets
    if bidirectional:
        n //= 2
        bucket = bucket + np.where(offset > 0, n, 0)
        distance = np.abs(offset)
    else:
        distance = np.maximum(-offset, 0)
    max_exact = n // 2
    with np.errstate(divide="ignore"):
        log_pos = max_exact + (
            np.log(np.maximum(distance, 1) / max_exact)
            / math.log(max_distance / max_exact)
            * (n - max_exact)
        ).astype(np.int64)
    large = np.minimum(log_pos, n - 1)
    bucket = bucket + np.where(distance < max_exact, distance, large)
    return bucket if bucket.ndim else int(bucket)


def _bucket_matrix(q_positions, k_positions, bidirectional, num_buckets, max_distance):
    offsets = np.asarray(k_positions)[None, :] - np.asarray(q_positions)[:, None]
    return relative_bucket(offsets, bidirectional, num_buckets, max_distance)


def attention(q: T.Tensor, k: T.Tensor, v: T.Tensor, mask: np.ndarray,
              rel_bias: T.Tensor | None, w_o: T.Tensor, dropout_rate: float,
              rng, training: bool, scale_logits: bool = False) -> T.Tensor:
    """Multi-head attention over pre-split heads.

    q, k, v: [heads, len_q/len_k, d_kv]; mask: [len_q, len_k] booleans;
    rel_bias: optional [heads, len_q, len_k] added to the raw logits
    (no 1/sqrt(d_kv) scaling unless scale_logits). Masked positions are
    forced to -inf before the softmax; weights see dropout; heads are
    concatenated and projected by w_o.
    """
    if q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2] or k.shape[:2] != v.shape[:2]:
        raise DimensionError(f"attention head shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    if mask.shape != (q.shape[1], k.shape[1]):
        raise DimensionError(f"mask {mask.shape} does not match lengths ({q.shape[1]}, {k.shape[1]})")
    logits = T.matmul(q, T.transpose(k, (0, 2, 1)))
    if scale_logits:
        logits = T.mul(logits, 1.0 / math.sqrt(q.shape[2]))
    if rel_bias is not None:
        logits = T.add(logits, rel_bias)
    bias = np.where(mask, 0.0, -np.inf)[None, :, :]
    logits = T.add(logits, bias.astype(logits.data.dtype))
    weights = T.softmax(logits, axis=-1)
    weights = T.dropout(weights, dropout_rate, rng, training)
    mixed = T.matmul(weights, v)  # [heads, len_q, d_kv]
    heads, len_q, d_kv = mixed.shape
    flat = T.reshape(T.transpose(mixed, (1, 0, 2)), (len_q, heads * d_kv))
    return T.matmul(flat, w_o)


class TextToTextModel:
    """Parameter store plus forward passes for every architecture variant."""

    def __init__(self, cfg: ModelConfig, params: dict[str, T.Tensor] | None = None, init_rng: Rng | None = None):
        self.cfg = cfg
        if params is not None:
            self.params = params
        else:
            self.params = init_params(cfg, init_rng or Rng(0))

    # -- parameter access with tying/sharing via name resolution ------
    def resolve(self, name: str) -> str:
        cfg = self.cfg
        if cfg.architecture == "encoder_decoder_shared" and name.startswith("decoder/"):
            tail = name[len("decoder/"):]
            shared_kinds = ("self_attn/", "ffn/", "norm_self", "norm_ffn", "final_norm", "adapter/")
            if any(k in tail for k in shared_kinds) and "cross_attn" not in tail and "norm_cross" not in tail:
                return "encoder/" + tail
        return name

    def p(self, name: str) -> T.Tensor:
        return self.params[self.resolve(name)]

    def param_names(self) -> list[str]:
        return sorted(self.params)

    @property
    def dtype(self):
        return np.float32 if self.cfg.dtype == "float32" else np.float64

    # -- stacks ---------------------------------------------------------
    def _dropout_rng(self, rng: Rng | None) -> Rng:
        return rng if rng is not None else Rng(0, (0xD0,))

    def _attention_sublayer(self, x, prefix, mask, rel_bias, rng, training, kv_from=None):
        cfg = self.cfg
        normed = T.rms_layer_norm(x, self.p(f"{prefix}/norm"))
        source = normed if kv_from is None else kv_from
        n_q = normed.shape[0]
        n_k = source.shape[0]
        q = T.matmul(normed, self.p(f"{prefix}/wq"))
        k = T.matmul(source, self.p(f"{prefix}/wk"))
        v = T.matmul(source, self.p(f"{prefix}/wv"))

        def split(t, n):
            return T.transpose(T.reshape(t, (n, cfg.num_heads, cfg.d_kv)), (1, 0, 2))

        out = attention(
            split(q, n_q), split(k, n_k), split(v, n_k), mask, rel_bias,
            self.p(f"{prefix}/wo"), cfg.dropout_rate, rng.child(0), training,
            cfg.scale_attention_logits,
        )
        return T.add(x, T.dropout(out, cfg.dropout_rate, rng.child(1), training))

    def _ffn_sublayer(self, x, prefix, rng, training):
        cfg = self.cfg
        normed = T.rms_layer_norm(x, self.p(f"{prefix}/norm"))
        h = T.relu(T.matmul(normed, self.p(f"{prefix}/wi")))
        h = T.dropout(h, cfg.dropout_rate, rng.child(0), training)
        out = T.matmul(h, self.p(f"{prefix}/wo"))
        x = T.add(x, T.dropout(out, cfg.dropout_rate, rng.child(1), training))
        if cfg.adapter_dim is not None:
            a = prefix.replace("/ffn", "/adapter")
            inner = T.relu(T.matmul(x, self.p(f"{a}/wi")))
            x = T.add(x, T.matmul(inner, self.p(f"{a}/wo")))
        return x

    def _rel_bias(self, stack: str, q_positions, k_positions):
        cfg = self.cfg
        buckets = _bucket_matrix(
            q_positions, k_positions, bidirectional=(stack == "encoder"),
            num_buckets=cfg.num_rel_buckets, max_distance=cfg.rel_max_distance,
        )
        return T.bucket_bias(self.p(f"{stack}/rel_bias"), buckets)

    @staticmethod
    def _segment_mask(base: np.ndarray, q_segments, k_segments) -> np.ndarray:
        if q_segments is None and k_segments is None:
            return base
        qs = np.asarray(q_segments)
        ks = np.asarray(k_segments)
        return base & (qs[:, None] == ks[None, :])

    def encoder_forward(self, input_ids, rng: Rng | None = None, training: bool = False,
                        segments=None, positions=None) -> T.Tensor:
        """Bidirectional stack: [len] token ids -> [len, d_model]."""
        if not self.has_encoder:
            raise ConfigurationError(f"architecture {self.cfg.architecture!r} has no encoder")
        cfg = self.cfg
        rng = self._dropout_rng(rng)
        ids = np.asarray(list(input_ids), dtype=np.int64)
        positions = np.arange(len(ids)) if positions is None else np.asarray(positions)
        x = T.embedding(self.p("embedding"), ids)
        x = T.dropout(x, cfg.dropout_rate, rng.child(1), training)
        mask = self._segment_mask(build_mask(MaskPattern("fully_visible"), max(len(ids), 1))[: len(ids), : len(ids)],
                                  segments, segments)
        rel = self._rel_bias("encoder", positions, positions)
        for layer in range(cfg.num_layers):
            x = self._attention_sublayer(x, f"encoder/layer{layer}/self_attn", mask, rel, rng.child(10 + layer), training)
            x = self._ffn_sublayer(x, f"encoder/layer{layer}/ffn", rng.child(100 + layer), training)
        x = T.rms_layer_norm(x, self.p("encoder/final_norm"))
        return T.dropout(x, cfg.dropout_rate, rng.child(2), training)

    @property
    def has_encoder(self) -> bool:
        return self.cfg.has_encoder

    def decoder_forward(self, target_ids, encoder_out: T.Tensor | None = None,
                        self_mask: MaskPattern | None = None, rng: Rng | None = None,
                        training: bool = False, segments=None, positions=None,
                        encoder_segments=None) -> T.Tensor:
        """Autoregressive (or prefix) stack: [len] ids -> [len, vocab] logits.

        Cross-attention runs only when encoder output is provided; the
        final projection is the transposed input embedding matrix.
        """
        cfg = self.cfg
        if self.has_encoder and encoder_out is None:
            raise ConfigurationError("encoder-decoder architecture requires encoder_out")
        if not self.has_encoder and encoder_out is not None:
            raise ConfigurationError(f"architecture {self.cfg.architecture!r} takes no encoder output")
        rng = self._dropout_rng(rng)
        ids = np.asarray(list(target_ids), dtype=np.int64)
        n = len(ids)
        positions = np.arange(n) if positions is None else np.asarray(positions)
        if self_mask is None:
            self_mask = MaskPattern("causal")
        mask = self._segment_mask(build_mask(self_mask, max(n, 1))[:n, :n], segments, segments)
        x = T.embedding(self.p("embedding"), ids)
        x = T.dropout(x, cfg.dropout_rate, rng.child(3), training)
        rel = self._rel_bias("decoder", positions, positions)
        cross_mask = None
        if encoder_out is not None and encoder_out.shape[0] > 0:
            base = np.ones((n, encoder_out.shape[0]), dtype=bool)
            cross_mask = self._segment_mask(base, segments, encoder_segments)
        for layer in range(cfg.num_layers):
            x = self._attention_sublayer(x, f"decoder/layer{layer}/self_attn", mask, rel, rng.child(20 + layer), training)
            if cross_mask is not None:
                x = self._attention_sublayer(
                    x, f"decoder/layer{layer}/cross_attn", cross_mask, None,
                    rng.child(40 + layer), training, kv_from=encoder_out,
                )
            x = self._ffn_sublayer(x, f"decoder/layer{layer}/ffn", rng.child(200 + layer), training)
        x = T.rms_layer_norm(x, self.p("decoder/final_norm"))
        x = T.dropout(x, cfg.dropout_rate, rng.child(4), training)
        return T.matmul(x, T.transpose(self.p("embedding")))


def init_params(cfg: ModelConfig, rng: Rng) -> dict[str, T.Tensor]:
    """Normal(0, 1/sqrt(d_model)) projections and embeddings, zero bias
    tables, unit norm gains; ffn output projections get an extra
    1/sqrt(num_layers) to keep tiny-scale training stable."""
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    std = 1.0 / math.sqrt(cfg.d_model)
    ffn_std = std / math.sqrt(max(cfg.num_layers, 1))

    def dense(shape, scale):
        return T.Tensor(rng.normal(shape, scale), requires_grad=True, dtype=dtype)

    params: dict[str, T.Tensor] = {}
    params["embedding"] = dense((cfg.vocab_size, cfg.d_model), std)

    def add_stack(stack: str, cross: bool):
        params[f"{stack}/rel_bias"] = T.Tensor(
            np.zeros((cfg.num_heads, cfg.num_rel_buckets)), requires_grad=True, dtype=dtype)
        params[f"{stack}/final_norm"] = T.Tensor(np.ones(cfg.d_model), requires_grad=True, dtype=dtype)
        for layer in range(cfg.num_layers):
            for attn in ["self_attn"] + (["cross_attn"] if cross else []):
                base = f"{stack}/layer{layer}/{attn}"
                params[f"{base}/norm"] = T.Tensor(np.ones(cfg.d_model), requires_grad=True, dtype=dtype)
                params[f"{base}/wq"] = dense((cfg.d_model, cfg.d_inner), std)
                params[f"{base}/wk"] = dense((cfg.d_model, cfg.d_inner), std)
                params[f"{base}/wv"] = dense((cfg.d_model, cfg.d_inner), std)
                params[f"{base}/wo"] = dense((cfg.d_inner, cfg.d_model), std)
            base = f"{stack}/layer{layer}/ffn"
            params[f"{base}/norm"] = T.Tensor(np.ones(cfg.d_model), requires_grad=True, dtype=dtype)
            params[f"{base}/wi"] = dense((cfg.d_model, cfg.d_ff), std)
            params[f"{base}/wo"] = dense((cfg.d_ff, cfg.d_model), ffn_std)
            if cfg.adapter_dim is not None:
                a = f"{stack}/layer{layer}/adapter"
                params[f"{a}/wi"] = dense((cfg.d_model, cfg.adapter_dim), std)
                params[f"{a}/wo"] = T.Tensor(
                    np.zeros((cfg.adapter_dim, cfg.d_model)), requires_grad=True, dtype=dtype)

    if cfg.architecture == "encoder_decoder":
        add_stack("encoder", cross=False)
        add_stack("decoder", cross=True)
    elif cfg.architecture == "encoder_decoder_shared":
        add_stack("encoder", cross=False)
        # decoder owns only what is not shared with the encoder
        for layer in range(cfg.num_layers):
            base = f"decoder/layer{layer}/cross_attn"
            params[f"{base}/norm"] = T.Tensor(np.ones(cfg.d_model), requires_grad=True, dtype=dtype)
            params[f"{base}/wq"] = dense((cfg.d_model, cfg.d_inner), std)
            params[f"{base}/wk"] = dense((cfg.d_model, cfg.d_inner), std)
            params[f"{base}/wv"] = dense((cfg.d_model, cfg.d_inner), std)
            params[f"{base}/wo"] = dense((cfg.d_inner, cfg.d_model), std)
        params["decoder/rel_bias"] = T.Tensor(
            np.zeros((cfg.num_heads, cfg.num_rel_buckets)), requires_grad=True, dtype=dtype)
    else:  # decoder_lm / prefix_lm: a single decoder stack without cross-attention
        add_stack("decoder", cross=False)
    return params


def count_params(cfg: ModelConfig) -> int:
    """Exact learned-scalar count, including embeddings, relative-bias
    tables, norm gains, and adapters when configured. Shared and tied
    parameters are counted once. Mirrors init_params without allocating
    anything (large presets stay cheap to inspect)."""
    d, inner, ff = cfg.d_model, cfg.d_inner, cfg.d_ff
    attn = 4 * d * inner + d  # q, k, v, o plus the sublayer norm gain
    ffn = 2 * d * ff + d
    adapter = 2 * d * cfg.adapter_dim if cfg.adapter_dim is not None else 0
    stack_tail = d + cfg.num_heads * cfg.num_rel_buckets  # final norm + bias table
    embedding = cfg.vocab_size * d

    if cfg.architecture == "encoder_decoder":
        encoder = cfg.num_layers * (attn + ffn + adapter) + stack_tail
        decoder = cfg.num_layers * (2 * attn + ffn + adapter) + stack_tail
        return embedding + encoder + decoder
    if cfg.architecture == "encoder_decoder_shared":
        shared = cfg.num_layers * (attn + ffn + adapter) + stack_tail
        decoder_own = cfg.num_layers * attn + cfg.num_heads * cfg.num_rel_buckets
        return embedding + shared + decoder_own
    single = cfg.num_layers * (attn + ffn + adapter) + stack_tail
    return embedding + single


def estimate_flops(cfg: ModelConfig, input_len: int, target_len: int) -> int:
    """Analytic multiply-accumulate count for one (input, target) pass.

    Counts the dense matmuls: q/k/v/o projections, attention score and
    mixing products, feed-forward layers, and the vocabulary projection
    over decoded positions.
    """
    d, inner, ff, v = cfg.d_model, cfg.d_inner, cfg.d_ff, cfg.vocab_size
    single_stack = not cfg.has_encoder
    if single_stack:
        n = input_len + target_len
        per_layer = 4 * n * d * inner + 2 * n * n * inner + 2 * n * d * ff
        return cfg.num_layers * per_layer + n * d * v
    ni, nt = input_len, target_len
    enc_layer = 4 * ni * d * inner + 2 * ni * ni * inner + 2 * ni * d * ff
    if nt == 0:
        return cfg.num_layers * enc_layer
    dec_self = 4 * nt * d * inner + 2 * nt * nt * inner
    dec_cross = 2 * nt * d * inner + 2 * ni * d * inner + 2 * nt * ni * inner
    dec_layer = dec_self + dec_cross + 2 * nt * d * ff
    return cfg.num_layers * (enc_layer + dec_layer) + nt * d * v


def with_architecture(cfg: ModelConfig, architecture: str) -> ModelConfig:
    return replace(cfg, architecture=architecture)
