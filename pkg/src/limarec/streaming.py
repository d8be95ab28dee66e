"""Constant-size per-user state with O(1) ingestion of each new click.

The state holds six running sums: per attention block a key-feature /
value outer-product matrix (m x d) and a key-feature vector (m), plus the
same pair for the interest head, and a position counter.  Ingesting one
click updates every sum with the new position FIRST and only then
evaluates the attention with the new position's query, so position l
attends to positions 1..l inclusive.  Nothing about the past sequence is
retained; state size never changes.

Wire format (little-endian): magic ``LMST``, version u16 (1 = float32
payload, 2 = float64), d/m/K as u32, position u64, then r1, r2, r_tilde
(m x d each, row-major) and z1, z2, z_tilde (m each).  K = 0 marks the
ablation model (interest head bypassed); the r_tilde/z_tilde slots are
then all-zero placeholders so the record length stays fixed.  The cached
interest set is derived data and is not serialized; it is recomputed from
the model on demand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .encoder import ffn, layer_norm_rows
from .errors import CodecError
from .featmap import apply as fm_apply
from .model import ModelParams
from .numerics import require_finite

_MAGIC = b"LMST"
_HEADER = struct.Struct("<4sHIIIQ")  # magic, version, d, m, K, position


@dataclass(frozen=True)
class InterestSet:
    """The up-to-date disentangled representations, one row per interest."""

    phis: np.ndarray  # (K, d); a single row when the interest head is bypassed

    def __post_init__(self):
        if self.phis.ndim != 2 or self.phis.shape[0] < 1:
            raise ValueError("phis must be (K, d) with K >= 1")


@dataclass
class UserState:
    r1: np.ndarray        # (m, d)
    r2: np.ndarray        # (m, d)
    r_tilde: np.ndarray   # (m, d)
    z1: np.ndarray        # (m,)
    z2: np.ndarray        # (m,)
    z_tilde: np.ndarray   # (m,)
    position: int
    last_interests: InterestSet | None = None


def init_state(model: ModelParams, dtype=np.float32) -> UserState:
    """All-zero state at position 0 (the base case of the running sums)."""
    m, d = model.m, model.d
    z = lambda shape: np.zeros(shape, dtype=dtype)
    return UserState(r1=z((m, d)), r2=z((m, d)), r_tilde=z((m, d)),
                     z1=z(m), z2=z(m), z_tilde=z(m), position=0)


def _block_step(h, blk, fm, r, z):
    """One position through one block; returns (h_out, s, r', z')."""
    a = layer_norm_rows(h, blk.ln_attn_gain, blk.ln_attn_bias)
    c = fm.query_key_scale
    phi_q = fm_apply(fm, (blk.w_q @ a) * c)
    phi_k = fm_apply(fm, (blk.w_k @ a) * c)
    v = blk.w_v @ a
    r = r + np.outer(phi_k, v).astype(r.dtype)
    z = z + phi_k.astype(z.dtype)
    s = (phi_q @ r) / (phi_q @ z)
    x = h + s
    out = x + ffn(layer_norm_rows(x, blk.ln_ffn_gain, blk.ln_ffn_bias), blk)
    return out, s, r, z


def ingest(state: UserState, item: int, model: ModelParams,
           internals: dict | None = None) -> tuple[UserState, InterestSet]:
    """Fold one click into the state; cost independent of history length.

    Returns a fresh state (the input is left untouched) and the updated
    interest set, which is also cached on the new state.
    """
    if not (1 <= item <= model.vocab_size):
        raise ValueError(f"item index {item} out of range [1, {model.vocab_size}]")
    pos = state.position + 1
    emb = model.embeddings
    h0 = emb.item_table[item] + emb.pos_table[min(pos, emb.pos_table.shape[0]) - 1]

    fm = model.feature_map
    h1, s1, r1, z1 = _block_step(h0, model.blocks[0], fm, state.r1, state.z1)
    h2, s2, r2, z2 = _block_step(h1, model.blocks[1], fm, state.r2, state.z2)

    if model.interest is None:
        r_t, z_t = state.r_tilde, state.z_tilde
        phis = h2[None, :].copy()
    else:
        mi = model.interest
        phi_k = fm_apply(fm, mi.w_k_tilde @ h2)
        v = mi.w_v_tilde @ h2
        r_t = state.r_tilde + np.outer(phi_k, v).astype(state.r_tilde.dtype)
        z_t = state.z_tilde + phi_k.astype(state.z_tilde.dtype)
        phi_mu = model.interest_feature_queries()
        phis = (phi_mu @ r_t) / (phi_mu @ z_t)[:, None]

    require_finite(phis, "interest representation")
    interests = InterestSet(phis=phis)
    new_state = UserState(r1=r1, r2=r2, r_tilde=r_t, z1=z1, z2=z2,
                          z_tilde=z_t, position=pos, last_interests=interests)
    if internals is not None:
        internals.update(h0=h0, s1=s1, h1=h1, s2=s2, h2=h2)
    return new_state, interests


def interest_set(state: UserState, model: ModelParams | None = None) -> InterestSet:
    """Current interest representations; O(1), served from the cache.

    After deserialization the cache is empty and the model is required
    once to rebuild it from the stored sums.
    """
    if state.position < 1:
        raise ValueError("no behaviors ingested")
    if state.last_interests is not None:
        return state.last_interests
    if model is None:
        raise ValueError("interest cache absent (deserialized state); pass the model")
    if model.interest is None:
        raise ValueError("ablation model: interests exist only at ingest time")
    phi_mu = model.interest_feature_queries()
    phis = (phi_mu @ state.r_tilde) / (phi_mu @ state.z_tilde)[:, None]
    cached = InterestSet(phis=phis)
    state.last_interests = cached
    return cached


def score_items(interests: InterestSet, item_embs: np.ndarray, mode: str = "exact_max",
                target_emb: np.ndarray | None = None) -> np.ndarray:
    """Preference scores for candidate items.

    ``exact_max``: score(j) = max over interests of phi_k . e_j.
    ``universal``: pick the interest with the largest inner product with
    the target embedding, then score every candidate with that single
    representation (the cheap evaluation shortcut; requires a target).
    """
    phis = interests.phis
    if mode == "exact_max":
        return (item_embs @ phis.T).max(axis=1)
    if mode == "universal":
        if target_emb is None:
            raise ValueError("universal mode requires target_emb")
        k = int(np.argmax(phis @ target_emb))
        return item_embs @ phis[k]
    raise ValueError(f"unknown scoring mode {mode!r}")


def _dims_of(state: UserState, n_interests: int) -> tuple[int, int, int]:
    m, d = state.r1.shape
    return d, m, n_interests


def serialize_state(state: UserState, n_interests: int) -> bytes:
    """Fixed-length binary record; length depends only on (d, m, dtype)."""
    d, m, k = _dims_of(state, n_interests)
    dtype = state.r1.dtype
    version = 1 if dtype == np.float32 else 2
    parts = [_HEADER.pack(_MAGIC, version, d, m, k, state.position)]
    for t in (state.r1, state.r2, state.r_tilde, state.z1, state.z2, state.z_tilde):
        parts.append(np.ascontiguousarray(t, dtype=dtype).tobytes())
    return b"".join(parts)


def state_record_size(d: int, m: int, dtype=np.float32) -> int:
    return _HEADER.size + (3 * m * d + 3 * m) * np.dtype(dtype).itemsize


def deserialize_state(buf: bytes, d: int, m: int, n_interests: int) -> UserState:
    """Decode a record, validating magic, version and dims against the model."""
    if len(buf) < _HEADER.size:
        raise CodecError("state record truncated (header)")
    magic, version, rd, rm, rk, position = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise CodecError("not a user-state record")
    if version not in (1, 2):
        raise CodecError(f"unsupported state version {version}")
    if (rd, rm, rk) != (d, m, n_interests):
        raise CodecError(f"state dims {(rd, rm, rk)} do not match model {(d, m, n_interests)}")
    dtype = np.float32 if version == 1 else np.float64
    if len(buf) != state_record_size(d, m, dtype):
        raise CodecError("state record truncated or oversized")
    flat = np.frombuffer(buf, dtype=dtype, offset=_HEADER.size).copy()
    o = 0
    mats = []
    for _ in range(3):
        mats.append(flat[o:o + m * d].reshape(m, d))
        o += m * d
    vecs = []
    for _ in range(3):
        vecs.append(flat[o:o + m])
        o += m
    return UserState(r1=mats[0], r2=mats[1], r_tilde=mats[2],
                     z1=vecs[0], z2=vecs[1], z_tilde=vecs[2],
                     position=position)
