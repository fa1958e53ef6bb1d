"""Sublayers of the generator: norms, attention, CCA, FFT block, predictors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..core import ops
from ..core.tensor import Tensor, as_tensor, concat, relu, reshape, take_rows
from ..errors import ContractError, DimensionError

Params = Mapping[str, Tensor]


@dataclass
class RunContext:
    """Dropout switch plus the keys that make dropout masks reproducible."""

    training: bool = False
    seed: int = 0
    step: int = 0
    utterance: int = 0

    def rng(self, site: str):
        if not self.training:
            return None
        return ops.dropout_seed(self.seed, f"{site}#{self.utterance}", self.step)


@dataclass
class AttentionDump:
    location: str  # "encoder" or "decoder"
    layer: int
    head: int
    weights: np.ndarray
    utterance_id: str = ""
    speaker_id: int = -1
    emotion_id: int = -1


@dataclass
class AttentionProjections:
    """Query/key/value maps of one self-attention layer, shared with CCA."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor


@dataclass
class BlockTrace:
    cca_weights: Tensor | None = None
    extras: dict = field(default_factory=dict)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    return ops.matmul(x, w) if b is None else ops.affine(x, w, b)


def _mask_column(mask: np.ndarray | None, n: int) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise DimensionError(f"mask shape {mask.shape} does not match sequence length {n}")
    return mask.astype(np.float64)[:, None]


def apply_mask(x: Tensor, mask: np.ndarray | None) -> Tensor:
    """Zero the padded rows of ``x``; identity when nothing is padded."""
    if mask is None or np.all(mask):
        return x
    return x * _mask_column(mask, x.shape[0])


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = ops.LN_EPS) -> Tensor:
    return ops.layer_norm_core(x, eps) * gamma + beta


def conditional_layer_norm(
    x: Tensor, c: Tensor, scale_w: Tensor, scale_b: Tensor, bias_w: Tensor, bias_b: Tensor, eps: float = ops.LN_EPS
) -> Tensor:
    """Layer norm whose per-channel scale and shift are affine maps of ``c``."""
    x, c = as_tensor(x), as_tensor(c)
    if x.ndim != 2 or c.shape != (x.shape[1],):
        raise DimensionError(f"conditional_layer_norm: x {x.shape} needs c of shape ({x.shape[-1]},), got {c.shape}")
    scale = ops.affine(c, scale_w, scale_b)
    shift = ops.affine(c, bias_w, bias_b)
    return scale * ops.layer_norm_core(x, eps) + shift


def norm(x: Tensor, c: Tensor | None, params: Params, prefix: str, eps: float = ops.LN_EPS) -> Tensor:
    """Plain LN or CLN, whichever parameters exist under ``prefix``."""
    if f"{prefix}.gamma" in params:
        return layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], eps)
    return conditional_layer_norm(
        x, c, params[f"{prefix}.scale.w"], params[f"{prefix}.scale.b"],
        params[f"{prefix}.bias.w"], params[f"{prefix}.bias.b"], eps,
    )


def projections(params: Params, prefix: str) -> AttentionProjections:
    return AttentionProjections(
        params[f"{prefix}.q.w"], params[f"{prefix}.q.b"],
        params[f"{prefix}.k.w"], params[f"{prefix}.k.b"],
        params[f"{prefix}.v.w"], params[f"{prefix}.v.b"],
    )


def self_attention(
    h: Tensor, params: Params, prefix: str, n_heads: int, mask: np.ndarray | None = None
) -> tuple[Tensor, AttentionProjections]:
    """Multi-head scaled dot-product self-attention over the rows of ``h``.

    Padded keys get zero weight. Returns the output and the q/k/v parameter
    handles (the same objects, not copies) for reuse by CCA.
    """
    n, hidden = h.shape
    d = hidden // n_heads
    proj = projections(params, prefix)
    q = reshape(linear(h, proj.wq, proj.bq), (n, n_heads, d)).transpose(1, 0, 2)
    k = reshape(linear(h, proj.wk, proj.bk), (n, n_heads, d)).transpose(1, 0, 2)
    v = reshape(linear(h, proj.wv, proj.bv), (n, n_heads, d)).transpose(1, 0, 2)
    scores = ops.einsum2("hnd,hmd->hnm", q, k) * (1.0 / math.sqrt(d))
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[None, None, :]
    w = ops.softmax(scores, axis=-1, mask=key_mask)
    ctx = ops.einsum2("hnm,hmd->hnd", w, v).transpose(1, 0, 2)
    out = linear(reshape(ctx, (n, hidden)), params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])
    return out, proj


def cca_weights(h: Tensor, c: Tensor, proj: AttentionProjections, n_heads: int, mask: np.ndarray | None = None):
    """Per-head weights of each position against the conditioning token.

    Returns ``(w, v)`` with ``w`` of shape (n, heads), normalized over the
    sequence positions, and the per-head value vectors ``v`` (heads, d).
    """
    n, hidden = h.shape
    if c.shape != (hidden,):
        raise DimensionError(f"conditional_cross_attention: c has shape {c.shape}, expected ({hidden},)")
    d = hidden // n_heads
    q = reshape(linear(h, proj.wq, proj.bq), (n, n_heads, d))
    k = reshape(ops.affine(c, proj.wk, proj.bk), (n_heads, d))
    v = reshape(ops.affine(c, proj.wv, proj.bv), (n_heads, d))
    logits = ops.einsum2("nhd,hd->nh", q, k) * (1.0 / math.sqrt(d))
    pos_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None]
    return ops.softmax(logits, axis=0, mask=pos_mask), v


def cca_combine(w: Tensor, v: Tensor) -> Tensor:
    """Row i of head h is ``w[i, h] * v[h]``; heads are concatenated."""
    n, heads = w.shape
    return reshape(ops.einsum2("nh,hd->nhd", w, v), (n, heads * v.shape[1]))


def conditional_cross_attention(
    h: Tensor, c: Tensor, proj: AttentionProjections, n_heads: int, mask: np.ndarray | None = None
) -> tuple[Tensor, Tensor]:
    """Reweight the conditioning token over positions and add it to ``h``."""
    w, v = cca_weights(h, c, proj, n_heads, mask)
    return h + apply_mask(cca_combine(w, v), mask), w


def feed_forward(h: Tensor, params: Params, prefix: str, mask: np.ndarray | None = None) -> Tensor:
    x = relu(ops.conv1d(h, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"]))
    x = apply_mask(x, mask)
    return ops.conv1d(x, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"])


def fft_block(
    h: Tensor,
    c: Tensor,
    params: Params,
    prefix: str,
    n_heads: int,
    use_cca: bool,
    mask: np.ndarray | None = None,
    dropout: float = 0.0,
    ctx: RunContext | None = None,
    eps: float = ops.LN_EPS,
    trace: BlockTrace | None = None,
) -> Tensor:
    """Self-attention, optional CCA, then the two-conv feed-forward sublayer.

    Post-norm residuals. The CCA residual has no norm of its own, so enabling
    it adds no parameters.
    """
    ctx = ctx or RunContext()
    h = apply_mask(h, mask)
    a, proj = self_attention(h, params, f"{prefix}.attn", n_heads, mask)
    a = ops.dropout(a, dropout, ctx.rng(f"{prefix}.attn"))
    h = apply_mask(norm(h + a, c, params, f"{prefix}.attn_norm", eps), mask)
    if use_cca:
        h, w = conditional_cross_attention(h, c, proj, n_heads, mask)
        if trace is not None:
            trace.cca_weights = w
    f = feed_forward(h, params, f"{prefix}.ffn", mask)
    f = ops.dropout(f, dropout, ctx.rng(f"{prefix}.ffn"))
    return apply_mask(norm(h + f, c, params, f"{prefix}.ffn_norm", eps), mask)


def _predictor_trunk(h, params, prefix, mask, dropout, ctx, eps):
    ctx = ctx or RunContext()
    x = apply_mask(h, mask)
    for i in (1, 2):
        x = relu(ops.conv1d(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"]))
        x = layer_norm(x, params[f"{prefix}.norm{i}.gamma"], params[f"{prefix}.norm{i}.beta"], eps)
        x = ops.dropout(x, dropout, ctx.rng(f"{prefix}.drop{i}"))
        x = apply_mask(x, mask)
    return x


def variance_predictor(
    h: Tensor, params: Params, prefix: str, mask=None, dropout: float = 0.0, ctx: RunContext | None = None,
    eps: float = ops.LN_EPS,
) -> Tensor:
    """Token-level scalar predictor (duration, pitch or energy); returns shape (n,)."""
    x = _predictor_trunk(h, params, prefix, mask, dropout, ctx, eps)
    out = linear(x, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])
    out = apply_mask(out, mask)
    return reshape(out, (h.shape[0],))


def egemaps_predict(
    h: Tensor, params: Params, prefix: str, mask=None, dropout: float = 0.0, ctx: RunContext | None = None,
    eps: float = ops.LN_EPS,
) -> Tensor:
    """Utterance-level predictor: masked mean-pool of the conv trunk, then linear."""
    n = h.shape[0]
    valid = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not valid.any():
        raise ContractError("egemaps_predict: utterance has no unmasked tokens")
    x = _predictor_trunk(h, params, prefix, mask, dropout, ctx, eps)
    pool = Tensor((valid / valid.sum())[None, :])
    pooled = ops.matmul(pool, x)
    out = linear(pooled, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])
    return reshape(out, (out.shape[1],))


def length_regulate(h: Tensor, durations) -> Tensor:
    """Repeat row i of ``h`` ``durations[i]`` times, in order."""
    d = np.asarray(durations)
    if d.shape != (h.shape[0],):
        raise DimensionError(f"length_regulate: {d.shape[0] if d.ndim else 0} durations for {h.shape[0]} tokens")
    if np.any(d < 0) or np.any(d != np.round(d)):
        raise ContractError("length_regulate: durations must be nonnegative integers")
    d = d.astype(np.int64)
    if d.sum() == 0:
        raise ContractError("length_regulate: all durations are zero (empty utterance)")
    return take_rows(h, np.repeat(np.arange(h.shape[0]), d))


def embed(table: Tensor, ids, table_name: str) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise IndexError(f"{table_name} id {bad} out of range [0, {table.shape[0]})")
    return take_rows(table, ids)


def conditioning_vector(speaker_id: int, emotion_id: int, speaker_table: Tensor, emotion_table: Tensor) -> Tensor:
    """Concatenate the speaker and emotion embeddings into one vector."""
    spk = embed(speaker_table, [speaker_id], "speaker")
    emo = embed(emotion_table, [emotion_id], "emotion")
    return reshape(concat([spk, emo], axis=1), (speaker_table.shape[1] + emotion_table.shape[1],))
