"""
Cross-modal data fusion block and the progressive assembly of encoder and
decoder inputs.

A fusion block takes a query modality ``q`` and a context modality ``kv``
(both ``batch x L x d_model``) and runs, in order:

1. causal multi-head self-attention over ``q`` (per-head dropout), output
   projection, residual, layer norm;
2. multi-head attention with queries from step 1 and keys/values from
   ``kv`` (unmasked), the same output projection, residual, layer norm;
3. ``ReLU(x W1)`` with dropout, ``W2``, residual, layer norm;
4. a final residual with the step-2 output and another layer norm.

The step-2 query projection reuses the step-1 query weights and one output
projection serves both attention stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import LayerNorm, Linear, Module, uniform_init
from .tensor import (
    Parameter,
    Tensor,
    add,
    causal_mask,
    concat,
    dropout,
    matmul,
    mul,
    relu,
    reshape,
    sinusoidal_table,
    softmax_rows,
    swap_last,
    transpose,
)

DECODER_VARIANTS = ("l", "t", "u", "t+l", "u+l", "u+t", "l+t+u")


@dataclass(frozen=True)
class FusionConfig:
    d_model: int = 128
    num_heads: int = 8
    d_ff: int = 512
    dropout: float = 0.05
    single_final_norm: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    b, length, d = x.shape
    return transpose(reshape(x, (b, length, num_heads, d // num_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, length, dk = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, length, h * dk))


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    wq,
    wk,
    wv,
    num_heads: int,
    mask: np.ndarray | None = None,
    rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    keep_weights: list | None = None,
) -> Tensor:
    """Scaled dot-product attention over ``num_heads`` heads, heads concatenated.

    ``mask`` is additive and broadcast over batch and heads. Dropout acts on
    each head's attention output, before concatenation.
    """
    q = split_heads(matmul(q_in, wq), num_heads)
    k = split_heads(matmul(kv_in, wk), num_heads)
    v = split_heads(matmul(kv_in, wv), num_heads)
    d_k = q.shape[-1]
    scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(d_k))
    if mask is not None:
        scores = add(scores, mask)
    weights = softmax_rows(scores)
    if keep_weights is not None:
        keep_weights.append(weights.data)
    heads = dropout(matmul(weights, v), rate, training, rng)
    return merge_heads(heads)


class CrossModalFusion(Module):
    """Fuses a query modality with a context modality; output has the query's shape."""

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator, causal: bool = True):
        d, dff = cfg.d_model, cfg.d_ff
        self.cfg = cfg
        self.causal = causal
        self.wq = Parameter(uniform_init(rng, d, (d, d)))
        self.wk_self = Parameter(uniform_init(rng, d, (d, d)))
        self.wv_self = Parameter(uniform_init(rng, d, (d, d)))
        self.wk_cross = Parameter(uniform_init(rng, d, (d, d)))
        self.wv_cross = Parameter(uniform_init(rng, d, (d, d)))
        self.wo = Parameter(uniform_init(rng, d, (d, d)))
        self.w1 = Parameter(uniform_init(rng, d, (d, dff)))
        self.w2 = Parameter(uniform_init(rng, dff, (dff, d)))
        self.norm_self = LayerNorm(d, cfg.ln_eps)
        self.norm_cross = LayerNorm(d, cfg.ln_eps)
        self.norm_ffn = LayerNorm(d, cfg.ln_eps)
        self.norm_out = LayerNorm(d, cfg.ln_eps)

    def __call__(self, q: Tensor, kv: Tensor, training: bool = False, rng=None, trace: dict | None = None) -> Tensor:
        d = self.cfg.d_model
        if q.ndim != 3 or kv.ndim != 3 or q.shape[-1] != d or kv.shape[-1] != d:
            raise ShapeError(f"fusion expects batch x L x {d} inputs, got q={q.shape} kv={kv.shape}")
        if q.shape[0] != kv.shape[0]:
            raise ShapeError(f"fusion batch sizes differ: q={q.shape} kv={kv.shape}")
        h, rate = self.cfg.num_heads, self.cfg.dropout
        mask = causal_mask(q.shape[1]) if self.causal else None

        self_att = multi_head_attention(q, q, self.wq, self.wk_self, self.wv_self, h, mask, rate, training, rng)
        self_out = self.norm_self(add(matmul(self_att, self.wo), q))

        cross_att = multi_head_attention(self_out, kv, self.wq, self.wk_cross, self.wv_cross, h, None, rate, training, rng)
        cross_out = self.norm_cross(add(matmul(cross_att, self.wo), self_out))

        hidden = dropout(relu(matmul(cross_out, self.w1)), rate, training, rng)
        ffn_out = self.norm_ffn(add(matmul(hidden, self.w2), cross_out))

        out = ffn_out if self.cfg.single_final_norm else self.norm_out(add(ffn_out, cross_out))
        if trace is not None:
            trace.update(self_attention=self_att, self_out=self_out, cross_attention=cross_att, cross_out=cross_out, ffn_out=ffn_out)
        return out


class PositionalEncoding:
    def __init__(self, d_model: int, max_len: int = 64):
        self.table = sinusoidal_table(max_len, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        length = x.shape[1]
        if length > self.table.shape[0]:
            raise ShapeError(f"sequence length {length} exceeds positional table of {self.table.shape[0]}")
        return add(x, self.table[:length])


def parse_decoder_variant(variant: str) -> tuple[str, ...]:
    if variant not in DECODER_VARIANTS:
        raise ConfigError(f"unknown decoder input variant {variant!r}; expected one of {DECODER_VARIANTS}")
    return tuple(variant.split("+"))


class ProgressiveFusion(Module):
    """Builds encoder and decoder inputs from the encoded app/user/POI/time streams.

    ``time_mode`` is ``"appformer"`` (time fused as a context modality),
    ``"baseline_additive"`` (time embedding added next to the positional
    encoding) or ``"none"`` (time not used on the encoder side).
    """

    def __init__(
        self,
        cfg: FusionConfig,
        d_app: int,
        d_user: int,
        rng: np.random.Generator,
        decoder_variant: str = "l",
        time_mode: str = "appformer",
        positional: bool = True,
        max_len: int = 64,
    ):
        if time_mode not in ("appformer", "baseline_additive", "none"):
            raise ConfigError(f"unknown time encoding {time_mode!r}")
        d = cfg.d_model
        self.cfg = cfg
        self.time_mode = time_mode
        self.positional = positional
        self.decoder_modalities = parse_decoder_variant(decoder_variant)

        self.app_user_proj = Linear(d_app + d_user, d, rng)
        self.fuse_poi = CrossModalFusion(cfg, rng)
        self.fuse_time = CrossModalFusion(cfg, rng) if time_mode == "appformer" else None
        self.encoder_proj = Linear(d, d, rng)

        self.decoder_app_proj = Linear(d_app, d, rng)
        self.decoder_user_proj = Linear(d_user, d, rng) if "u" in self.decoder_modalities else None
        self.decoder_fuse = [CrossModalFusion(cfg, rng) for _ in self.decoder_modalities]
        self.decoder_proj = Linear(d, d, rng)
        self.pe = PositionalEncoding(d, max_len)

    def _position(self, x: Tensor) -> Tensor:
        return self.pe(x) if self.positional else x

    def build_encoder_input(self, a: Tensor, u: Tensor, l: Tensor, t: Tensor | None, training=False, rng=None) -> Tensor:
        if a.shape[:2] != u.shape[:2] or a.shape[:2] != l.shape[:2]:
            raise ShapeError(f"encoded streams disagree on batch x m: a={a.shape} u={u.shape} l={l.shape}")
        x = self.app_user_proj(concat([a, u], axis=-1))
        x = self.fuse_poi(x, l, training, rng)
        if self.time_mode == "appformer":
            x = self.fuse_time(x, t, training, rng)
        x = self.encoder_proj(x)
        if self.time_mode == "baseline_additive":
            x = add(x, t)
        return self._position(x)

    def build_decoder_input(self, a: Tensor, l: Tensor, t: Tensor | None = None, u: Tensor | None = None, training=False, rng=None, trace: dict | None = None) -> Tensor:
        context = {"l": l, "t": t}
        if self.decoder_user_proj is not None:
            context["u"] = self.decoder_user_proj(u)
        x = self.decoder_app_proj(a)
        for name, block in zip(self.decoder_modalities, self.decoder_fuse):
            if context.get(name) is None:
                raise ConfigError(f"decoder variant needs modality {name!r}")
            x = block(x, context[name], training, rng)
        zero_slot = np.zeros((x.shape[0], 1, x.shape[2]))
        prep = concat([x, zero_slot], axis=1)
        if trace is not None:
            trace["prep"] = prep
        return self._position(self.decoder_proj(prep))
