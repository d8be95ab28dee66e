"""Parameter containers and model construction.

The model is: item + positional embeddings, two causal attention blocks
(each with query/key/value projections, a two-layer position-wise FFN and
two layer norms), and a multi-interest head (K trainable interest queries
plus shared key/value projections).  A single frozen random projection is
shared by both attention blocks and the interest head.

Setting ``n_interests = 0`` disables the interest head entirely: the
encoder output at the current position is used as the single user
representation (the ablation configuration).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .featmap import FeatureMapSpec, apply_rows, make_feature_map
from .numerics import DenseMatrix, DenseVector, SeededRng

LN_EPS = 1e-8


@dataclass
class EncoderConfig:
    d: int = 32
    l_max: int = 1000
    n_blocks: int = 2   # fixed; the state layout assumes exactly two
    dropout_rate: float = 0.1
    heads: int = 1      # fixed; single head

    def __post_init__(self):
        if self.d < 1 or self.l_max < 1:
            raise ValueError("d and l_max must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.n_blocks != 2 or self.heads != 1:
            raise ValueError("this model is fixed at two blocks and one head")


@dataclass
class EmbeddingTables:
    item_table: DenseMatrix  # (vocab+1, d); row 0 reserved for padding, kept zero
    pos_table: DenseMatrix   # (l_max, d)


@dataclass
class AttentionBlockParams:
    w_q: DenseMatrix
    w_k: DenseMatrix
    w_v: DenseMatrix
    ffn_w1: DenseMatrix
    ffn_w2: DenseMatrix
    ffn_b1: DenseVector
    ffn_b2: DenseVector
    ln_attn_gain: DenseVector
    ln_attn_bias: DenseVector
    ln_ffn_gain: DenseVector
    ln_ffn_bias: DenseVector


@dataclass
class MultiInterestParams:
    mu: DenseMatrix        # (K, d) interest queries
    w_k_tilde: DenseMatrix  # (d, d)
    w_v_tilde: DenseMatrix  # (d, d)


@dataclass
class ModelParams:
    config: EncoderConfig
    vocab_size: int
    embeddings: EmbeddingTables
    blocks: list[AttentionBlockParams]
    interest: MultiInterestParams | None  # None = ablation (no interest head)
    feature_map: FeatureMapSpec
    seed: int = 0
    _phi_mu_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.config.d

    @property
    def m(self) -> int:
        return self.feature_map.feature_dim

    @property
    def n_interests(self) -> int:
        """K as persisted: 0 means the interest head is bypassed."""
        return 0 if self.interest is None else self.interest.mu.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.embeddings.item_table.dtype

    def interest_feature_queries(self) -> np.ndarray:
        """features(mu_k) for all k, cached; invalidate after parameter updates."""
        if self.interest is None:
            raise ValueError("model has no interest head")
        if self._phi_mu_cache is None:
            self._phi_mu_cache = apply_rows(self.feature_map, self.interest.mu)
        return self._phi_mu_cache

    def invalidate_caches(self):
        self._phi_mu_cache = None

    def param_dict(self) -> dict[str, np.ndarray]:
        """Live views of every trainable tensor, keyed by a stable name.

        The frozen random projection is deliberately absent: it is part of
        the model but not trainable.
        """
        out: dict[str, np.ndarray] = {
            "item_table": self.embeddings.item_table,
            "pos_table": self.embeddings.pos_table,
        }
        for i, b in enumerate(self.blocks, start=1):
            for name in ("w_q", "w_k", "w_v", "ffn_w1", "ffn_w2", "ffn_b1",
                         "ffn_b2", "ln_attn_gain", "ln_attn_bias",
                         "ln_ffn_gain", "ln_ffn_bias"):
                out[f"block{i}.{name}"] = getattr(b, name)
        if self.interest is not None:
            out["mi.mu"] = self.interest.mu
            out["mi.w_k_tilde"] = self.interest.w_k_tilde
            out["mi.w_v_tilde"] = self.interest.w_v_tilde
        return out

    def set_param(self, name: str, value: np.ndarray):
        """Replace one tensor (same shape) and drop derived caches."""
        current = self.param_dict()[name]
        if current.shape != value.shape:
            raise ValueError(f"shape mismatch for {name}: {current.shape} vs {value.shape}")
        current[...] = value
        self.invalidate_caches()


def init_model(vocab_size: int, n_interests: int, rng: SeededRng,
               config: EncoderConfig | None = None,
               feature_dim: int | None = None,
               dtype=np.float64) -> ModelParams:
    """Random initialization; the feature projection is drawn last and frozen.

    ``n_interests = 0`` builds the ablation model without the interest head.
    Default feature_dim is d, matching the d x d / d-sized incremental
    state layout.
    """
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    if n_interests < 0:
        raise ValueError("n_interests must be >= 0")
    cfg = config or EncoderConfig()
    d = cfg.d
    m = feature_dim if feature_dim is not None else d

    def w(shape, scale):
        return (rng.standard_normal(shape) * scale).astype(dtype)

    emb = EmbeddingTables(
        item_table=w((vocab_size + 1, d), 0.1),
        pos_table=w((cfg.l_max, d), 0.1),
    )
    emb.item_table[0, :] = 0.0  # padding row stays zero

    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(AttentionBlockParams(
            w_q=w((d, d), d ** -0.5),
            w_k=w((d, d), d ** -0.5),
            w_v=w((d, d), d ** -0.5),
            ffn_w1=w((d, d), d ** -0.5),
            ffn_w2=w((d, d), d ** -0.5),
            ffn_b1=np.zeros(d, dtype=dtype),
            ffn_b2=np.zeros(d, dtype=dtype),
            ln_attn_gain=np.ones(d, dtype=dtype),
            ln_attn_bias=np.zeros(d, dtype=dtype),
            ln_ffn_gain=np.ones(d, dtype=dtype),
            ln_ffn_bias=np.zeros(d, dtype=dtype),
        ))

    interest = None
    if n_interests > 0:
        interest = MultiInterestParams(
            mu=w((n_interests, d), 0.1),
            w_k_tilde=w((d, d), d ** -0.5),
            w_v_tilde=w((d, d), d ** -0.5),
        )

    fm = make_feature_map(d, m, rng)
    fm = FeatureMapSpec(fm.input_dim, fm.feature_dim, fm.omega.astype(dtype),
                        scale_by_sqrt_d=True)
    return ModelParams(config=cfg, vocab_size=vocab_size, embeddings=emb,
                       blocks=blocks, interest=interest, feature_map=fm)
