"""Random feature map turning the exponential kernel into an inner product.

For a frozen Gaussian projection ``omega`` (m rows, each in R^d), the map

    features(x)_i = (1 / sqrt(m)) * exp(omega_i . x - ||x||^2 / 2)

satisfies E[features(q) . features(k)] = exp(q . k) over redraws of omega,
with every component strictly positive.  Positivity is what keeps every
attention denominator downstream strictly positive.

The two exponents are fused before exponentiation (log-space evaluation):
``omega_i . x - ||x||^2 / 2 = (||omega_i||^2 - ||x - omega_i||^2) / 2`` is
bounded above by ``||omega_i||^2 / 2`` no matter how large ``||x||`` gets,
so the subtraction of the squared-norm term plays the role of the usual
max-subtraction and the exp never overflows for large inputs.

The projection is drawn once at model initialization, stored in the
checkpoint, and never redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DenseMatrix, DenseVector, SeededRng, gaussian_matrix


@dataclass(frozen=True)
class FeatureMapSpec:
    """Frozen random projection defining the feature map.

    ``scale_by_sqrt_d``: when the map is used inside an attention block,
    queries and keys are each pre-divided by d**(1/4) so the kernel
    argument becomes (q . k) / sqrt(d), matching the softmax temperature
    the linear path approximates.  The scaling is applied by the caller
    (see encoder); ``apply`` itself always evaluates the bare map.
    """

    input_dim: int
    feature_dim: int
    omega: DenseMatrix  # (feature_dim, input_dim)
    scale_by_sqrt_d: bool = True

    def __post_init__(self):
        if self.feature_dim < 1 or self.input_dim < 1:
            raise ValueError("feature_dim and input_dim must be >= 1")
        if self.omega.shape != (self.feature_dim, self.input_dim):
            raise ValueError(
                f"omega shape {self.omega.shape} != "
                f"({self.feature_dim}, {self.input_dim})")

    @property
    def query_key_scale(self) -> float:
        """Factor applied to attention queries/keys before the map."""
        return float(self.input_dim) ** -0.25 if self.scale_by_sqrt_d else 1.0


def make_feature_map(input_dim: int, feature_dim: int, rng: SeededRng,
                     scale_by_sqrt_d: bool = True) -> FeatureMapSpec:
    """Draw a fresh i.i.d. Gaussian projection from the given stream."""
    omega = gaussian_matrix(feature_dim, input_dim, rng)
    return FeatureMapSpec(input_dim, feature_dim, omega, scale_by_sqrt_d)


def apply(spec: FeatureMapSpec, x: DenseVector) -> DenseVector:
    """Evaluate the feature map on one vector; output length feature_dim."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != spec.input_dim:
        raise ValueError(f"expected vector of dim {spec.input_dim}, got shape {x.shape}")
    return apply_rows(spec, x[None, :])[0]


def apply_rows(spec: FeatureMapSpec, x: np.ndarray) -> np.ndarray:
    """Row-wise map over the last axis: (..., d) -> (..., m).

    Exponents are assembled in log space (projection minus half squared
    norm minus log sqrt(m)) and exponentiated once.
    """
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"expected last dim {spec.input_dim}, got shape {x.shape}")
    proj = x @ spec.omega.T
    sqnorm = np.sum(np.square(x), axis=-1)
    log_feat = proj - 0.5 * sqnorm[..., None] - 0.5 * np.log(spec.feature_dim)
    return np.exp(log_feat)


def apply_rows_backward(spec: FeatureMapSpec, x: np.ndarray, feats: np.ndarray,
                        dfeats: np.ndarray) -> np.ndarray:
    """Gradient of apply_rows w.r.t. x.

    d features_i / d x = features_i * (omega_i - x), so with
    g = dfeats * feats the input gradient is g @ omega - x * sum(g).
    """
    g = dfeats * feats
    return g @ spec.omega - x * np.sum(g, axis=-1, keepdims=True)
