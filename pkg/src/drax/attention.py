"""Multi-head self-attention encoders and the bidirectional cross encoder.

Sequences flow through per-stream self-attention encoders, then a
cross-attention layer in which each stream queries the other. The cross
weights pass through the distraction step before they touch any values, so
low-relevance context positions contribute nothing to the update.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from . import tensor as T
from .distraction import MaskController, apply_mask, identify_distractions, schedule_df
from .tensor import ParamStore, Parameter, ShapeError, Tensor


@dataclass
class AttentionWeights:
    """Row-stochastic per-head attention matrices (pre-mask)."""

    weights: Tensor  # (heads, n_query, n_context)
    head_count: int
    scale: float


def split_heads(x: Tensor, head_count: int) -> Tensor:
    """(n, d) -> (heads, n, d/heads) subspace view."""
    n, d = x.shape
    if d % head_count != 0:
        raise ShapeError(f"hidden dim {d} not divisible by {head_count} heads")
    return T.transpose(T.reshape(x, (n, head_count, d // head_count)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(heads, n, d/heads) -> (n, d), inverse of split_heads."""
    h, n, dh = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (n, h * dh))


def scaled_scores(x_q: Tensor, x_k: Tensor, w_q, w_k, head_count: int) -> AttentionWeights:
    """Project queries and keys, score per head, softmax over the context axis."""
    d = x_q.shape[-1]
    if x_k.shape[-1] != d:
        raise ShapeError(f"query dim {d} does not match key dim {x_k.shape[-1]}")
    q = split_heads(T.matmul(x_q, w_q), head_count)
    k = split_heads(T.matmul(x_k, w_k), head_count)
    scale = 1.0 / math.sqrt(d / head_count)
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * scale
    return AttentionWeights(
        weights=T.softmax(scores, axis=-1), head_count=head_count, scale=scale
    )


def attended_values(attn: AttentionWeights, values: Tensor) -> Tensor:
    """Weight context values per head subspace and merge back to (n, d)."""
    v = split_heads(values, attn.head_count)
    return merge_heads(T.matmul(attn.weights, v))


@dataclass
class SelfAttentionParams:
    """One self-attention encoder: MSA projections, two norms, and the FFN."""

    head_count: int
    eps: float
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    ln1_gain: Parameter
    ln1_bias: Parameter
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, head_count: int, ffn_width: int,
               eps: float = 1e-5):
        return cls(
            head_count=head_count,
            eps=eps,
            w_q=store.matrix(f"{prefix}.w_q", d, d),
            w_k=store.matrix(f"{prefix}.w_k", d, d),
            w_v=store.matrix(f"{prefix}.w_v", d, d),
            w_o=store.matrix(f"{prefix}.w_o", d, d),
            ln1_gain=store.ones(f"{prefix}.ln1_gain", (d,)),
            ln1_bias=store.zeros(f"{prefix}.ln1_bias", (d,)),
            ffn_w1=store.matrix(f"{prefix}.ffn_w1", d, ffn_width),
            ffn_b1=store.zeros(f"{prefix}.ffn_b1", (ffn_width,)),
            ffn_w2=store.matrix(f"{prefix}.ffn_w2", ffn_width, d),
            ffn_b2=store.zeros(f"{prefix}.ffn_b2", (d,)),
            ln2_gain=store.ones(f"{prefix}.ln2_gain", (d,)),
            ln2_bias=store.zeros(f"{prefix}.ln2_bias", (d,)),
        )


@dataclass
class CrossLayerParams:
    """One cross layer: pre-norms, stream projections, shared Q/K, per-stream V."""

    head_count: int
    eps: float
    ln1_gain: Parameter
    ln1_bias: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter
    f1_w: Parameter
    f1_b: Parameter
    f2_w: Parameter
    f2_b: Parameter
    w_q: Parameter
    w_k: Parameter
    w_v1: Parameter
    w_v2: Parameter
    g1_w: Parameter
    g1_b: Parameter
    g2_w: Parameter
    g2_b: Parameter

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, head_count: int, eps: float = 1e-5):
        return cls(
            head_count=head_count,
            eps=eps,
            ln1_gain=store.ones(f"{prefix}.ln1_gain", (d,)),
            ln1_bias=store.zeros(f"{prefix}.ln1_bias", (d,)),
            ln2_gain=store.ones(f"{prefix}.ln2_gain", (d,)),
            ln2_bias=store.zeros(f"{prefix}.ln2_bias", (d,)),
            f1_w=store.matrix(f"{prefix}.f1_w", d, d),
            f1_b=store.zeros(f"{prefix}.f1_b", (d,)),
            f2_w=store.matrix(f"{prefix}.f2_w", d, d),
            f2_b=store.zeros(f"{prefix}.f2_b", (d,)),
            w_q=store.matrix(f"{prefix}.w_q", d, d),
            w_k=store.matrix(f"{prefix}.w_k", d, d),
            w_v1=store.matrix(f"{prefix}.w_v1", d, d),
            w_v2=store.matrix(f"{prefix}.w_v2", d, d),
            g1_w=store.matrix(f"{prefix}.g1_w", d, d),
            g1_b=store.zeros(f"{prefix}.g1_b", (d,)),
            g2_w=store.matrix(f"{prefix}.g2_w", d, d),
            g2_b=store.zeros(f"{prefix}.g2_b", (d,)),
        )


@dataclass
class EncoderLayerParams:
    self1: SelfAttentionParams
    self2: SelfAttentionParams
    cross: CrossLayerParams


@dataclass
class EncoderStack:
    d: int
    head_count: int
    layers: list[EncoderLayerParams]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, head_count: int, depth: int,
               ffn_width: int, eps: float = 1e-5):
        if d % head_count != 0:
            raise ShapeError(f"hidden dim {d} not divisible by {head_count} heads")
        if depth < 1:
            raise ValueError(f"encoder depth must be >= 1: {depth}")
        layers = [
            EncoderLayerParams(
                self1=SelfAttentionParams.create(
                    store, f"{prefix}.layer{k}.self1", d, head_count, ffn_width, eps
                ),
                self2=SelfAttentionParams.create(
                    store, f"{prefix}.layer{k}.self2", d, head_count, ffn_width, eps
                ),
                cross=CrossLayerParams.create(
                    store, f"{prefix}.layer{k}.cross", d, head_count, eps
                ),
            )
            for k in range(1, depth + 1)
        ]
        return cls(d=d, head_count=head_count, layers=layers)


def _with_tokens(seq, tokens: Tensor):
    return dataclasses.replace(seq, tokens=tokens)


def _affine(x: Tensor, w, b) -> Tensor:
    return T.matmul(x, w) + b


def multi_head_self_attention(x: Tensor, p: SelfAttentionParams) -> Tensor:
    attn = scaled_scores(x, x, p.w_q, p.w_k, p.head_count)
    out = attended_values(attn, T.matmul(x, p.w_v))
    return T.matmul(out, p.w_o)


def self_attention_encoder(seq, p: SelfAttentionParams):
    """MSA -> add & norm -> feed-forward -> add & norm; shape-preserving."""
    x = seq.tokens
    if x.shape[-1] != p.w_q.shape[0]:
        raise ShapeError(f"token dim {x.shape[-1]} does not match encoder dim {p.w_q.shape[0]}")
    x = T.layer_norm(x + multi_head_self_attention(x, p), p.ln1_gain, p.ln1_bias, p.eps)
    hidden = T.elu(_affine(x, p.ffn_w1, p.ffn_b1))
    x = T.layer_norm(x + _affine(hidden, p.ffn_w2, p.ffn_b2), p.ln2_gain, p.ln2_bias, p.eps)
    return _with_tokens(seq, x)


def _masked(attn: AttentionWeights, d_f: float, masker: MaskController | None, site: str,
            allow_above_one: bool) -> AttentionWeights:
    if masker is not None:
        return masker.apply(attn, d_f, site)
    return apply_mask(attn, identify_distractions(attn, d_f, allow_above_one=allow_above_one))


def cross_encoder_layer(seq1, seq2, p: CrossLayerParams, d_f: float,
                        masker: MaskController | None = None, site: str = "cross",
                        allow_above_one: bool = False):
    """Bidirectional masked cross-attention with residual back-projection.

    Each stream is pre-normalized, projected, and updated from the other
    stream's values using masked attention weights; queries and keys share
    projections across streams while values are per-stream.
    """
    x1, x2 = seq1.tokens, seq2.tokens
    n1 = _affine(T.layer_norm(x1, p.ln1_gain, p.ln1_bias, p.eps), p.f1_w, p.f1_b)
    n2 = _affine(T.layer_norm(x2, p.ln2_gain, p.ln2_bias, p.eps), p.f2_w, p.f2_b)
    a12 = scaled_scores(n1, n2, p.w_q, p.w_k, p.head_count)
    a21 = scaled_scores(n2, n1, p.w_q, p.w_k, p.head_count)
    a12 = _masked(a12, d_f, masker, f"{site}/into1", allow_above_one)
    a21 = _masked(a21, d_f, masker, f"{site}/into2", allow_above_one)
    ca1 = attended_values(a12, T.matmul(n2, p.w_v2))
    ca2 = attended_values(a21, T.matmul(n1, p.w_v1))
    y1 = x1 + _affine(ca1, p.g1_w, p.g1_b)
    y2 = x2 + _affine(ca2, p.g2_w, p.g2_b)
    return _with_tokens(seq1, y1), _with_tokens(seq2, y2)


def run_encoder_stack(seq1, seq2, stack: EncoderStack, d_f_initial: float, delta: float,
                      masker: MaskController | None = None, site: str = "stack",
                      allow_above_one: bool = False):
    """Alternate per-stream self encoders with cross layers for every level.

    The distraction factor advances by `delta` per level, starting at
    `d_f_initial` for the first cross layer.
    """
    for k, layer in enumerate(stack.layers, start=1):
        seq1 = self_attention_encoder(seq1, layer.self1)
        seq2 = self_attention_encoder(seq2, layer.self2)
        d_f = schedule_df(d_f_initial, delta, k, allow_above_one=allow_above_one)
        seq1, seq2 = cross_encoder_layer(
            seq1, seq2, layer.cross, d_f, masker, f"{site}/layer{k}", allow_above_one
        )
    return seq1, seq2
