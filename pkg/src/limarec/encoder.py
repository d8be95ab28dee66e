"""Whole-sequence forward pass.

Two causal attention blocks in pre-normalization form,

    x = h + Dropout(Attn(LN(h)))
    h' = x + Dropout(FFN(LN(x)))

with two attention implementations behind one flag: the linear path used
in production (feature-map kernel, running prefix sums, O(L * m * d)) and
an exact softmax path kept as the reference oracle.  Both are causal:
row l depends only on rows 1..l.

FFN orientation: the first weight left-multiplies the input column
vector, the ReLU'd result right-multiplies the second weight
(out = relu(W1 @ s + b1) @ W2 + b2).  The incremental path follows the
same convention so the two agree to rounding error.
"""

from __future__ import annotations

import numpy as np

from .featmap import FeatureMapSpec, apply_rows
from .model import LN_EPS, AttentionBlockParams, EmbeddingTables, ModelParams
from .numerics import SeededRng


def layer_norm_rows(h: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Row-wise layer norm over the last axis."""
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    return gain * (h - mu) / np.sqrt(var + LN_EPS) + bias


def embed_sequence(items, tables: EmbeddingTables) -> np.ndarray:
    """Item embedding plus positional embedding for positions 1..L.

    Positions beyond the trained horizon clamp to the last positional row,
    so arbitrarily long streams stay defined.
    """
    items = np.asarray(items, dtype=np.int64)
    if items.ndim != 1 or items.size == 0:
        raise ValueError("items must be a non-empty 1-d index list")
    vocab = tables.item_table.shape[0] - 1
    if items.min() < 1 or items.max() > vocab:
        raise ValueError(f"item index out of range [1, {vocab}]")
    l_max = tables.pos_table.shape[0]
    pos = np.minimum(np.arange(1, items.size + 1), l_max) - 1
    return tables.item_table[items] + tables.pos_table[pos]


def causal_softmax_attention(h: np.ndarray, p: AttentionBlockParams, d: int) -> np.ndarray:
    """Exact masked softmax attention with temperature 1/sqrt(d)."""
    q = h @ p.w_q.T
    k = h @ p.w_k.T
    v = h @ p.w_v.T
    logits = (q @ k.T) / np.sqrt(d)
    ll = h.shape[0]
    mask = np.tril(np.ones((ll, ll), dtype=bool))
    logits = np.where(mask, logits, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w = w / w.sum(axis=-1, keepdims=True)
    return w @ v


def causal_linear_attention(h: np.ndarray, p: AttentionBlockParams,
                            fm: FeatureMapSpec) -> np.ndarray:
    """Feature-map attention via causal prefix sums.

    Row l is (phi(q_l) . R_l) / (phi(q_l) . z_l) where R_l and z_l are the
    running sums of key-feature/value outer products and key features over
    positions 1..l.  With the temperature scaling enabled this
    approximates the softmax path above.
    """
    c = fm.query_key_scale
    phi_q = apply_rows(fm, (h @ p.w_q.T) * c)
    phi_k = apply_rows(fm, (h @ p.w_k.T) * c)
    v = h @ p.w_v.T
    r_cum = np.cumsum(np.einsum("lm,ld->lmd", phi_k, v), axis=0)
    z_cum = np.cumsum(phi_k, axis=0)
    num = np.einsum("lm,lmd->ld", phi_q, r_cum)
    den = np.einsum("lm,lm->l", phi_q, z_cum)
    return num / den[:, None]


def ffn(s: np.ndarray, p: AttentionBlockParams) -> np.ndarray:
    """Position-wise feed-forward: relu(W1 @ s + b1) @ W2 + b2, row-wise."""
    z = s @ p.ffn_w1.T + p.ffn_b1
    return np.maximum(z, 0.0) @ p.ffn_w2 + p.ffn_b2


def _dropout(x: np.ndarray, rate: float, rng: SeededRng | None) -> np.ndarray:
    if rate <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate)


def block_forward(h: np.ndarray, p: AttentionBlockParams, fm: FeatureMapSpec,
                  mode: str = "linear", dropout: float = 0.0,
                  rng: SeededRng | None = None,
                  internals: dict | None = None) -> np.ndarray:
    """One attention block with pre-norm residual sub-layers."""
    a = layer_norm_rows(h, p.ln_attn_gain, p.ln_attn_bias)
    if mode == "linear":
        s = causal_linear_attention(a, p, fm)
    elif mode == "softmax_reference":
        s = causal_softmax_attention(a, p, h.shape[-1])
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    x = h + _dropout(s, dropout, rng)
    f = ffn(layer_norm_rows(x, p.ln_ffn_gain, p.ln_ffn_bias), p)
    out = x + _dropout(f, dropout, rng)
    if internals is not None:
        internals["attn"] = s
        internals["out"] = out
    return out


def encode_batch(items, model: ModelParams, mode: str = "linear",
                 dropout: float = 0.0, rng: SeededRng | None = None,
                 internals: dict | None = None) -> np.ndarray:
    """Embeddings -> block 1 -> block 2; row l encodes the prefix up to l."""
    h = embed_sequence(items, model.embeddings)
    h = _dropout(h, dropout, rng)
    for i, blk in enumerate(model.blocks, start=1):
        blk_internals = {} if internals is not None else None
        h = block_forward(h, blk, model.feature_map, mode, dropout, rng,
                          blk_internals)
        if internals is not None:
            internals[f"s{i}"] = blk_internals["attn"]
            internals[f"h{i}"] = blk_internals["out"]
    return h


def interests_prefix(model: ModelParams, h2: np.ndarray) -> np.ndarray:
    """Interest representations at every prefix: (L, K, d).

    Queries the encoded sequence with each trainable interest vector via
    the same prefix-sum attention; row l holds all K representations of
    the prefix 1..l.  With the interest head disabled the encoder output
    itself is the single representation.
    """
    if model.interest is None:
        return h2[:, None, :]
    mi = model.interest
    fm = model.feature_map
    phi_k = apply_rows(fm, h2 @ mi.w_k_tilde.T)
    v = h2 @ mi.w_v_tilde.T
    r_cum = np.cumsum(np.einsum("lm,ld->lmd", phi_k, v), axis=0)
    z_cum = np.cumsum(phi_k, axis=0)
    phi_mu = apply_rows(fm, mi.mu)
    num = np.einsum("km,lmd->lkd", phi_mu, r_cum)
    den = np.einsum("km,lm->lk", phi_mu, z_cum)
    return num / den[..., None]
