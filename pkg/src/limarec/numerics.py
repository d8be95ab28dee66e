"""Dense linear-algebra and stochastic primitives used by every other module.

Matrices are plain ``numpy.ndarray`` objects: 2-d row-major for matrices,
1-d for vectors.  Test/oracle paths run in float64; production paths may
run in float32.  All public operations keep outputs finite for finite
inputs and raise ``ValueError`` on shape violations.

Randomness comes from one fixed, documented PRNG: NumPy's PCG64
(O'Neill's permuted congruential generator, 128-bit state, 64-bit
output).  The same seed yields the same draw sequence on every platform,
which is what makes a checkpointed random projection reproducible.
"""

from __future__ import annotations

import numpy as np

# Type aliases for readability; invariants (finiteness, shape) are enforced
# by the operations below, not by the types.
DenseMatrix = np.ndarray
DenseVector = np.ndarray
SeededRng = np.random.Generator


def seeded_rng(seed: int) -> SeededRng:
    """A PCG64 generator stream owned by a single logical consumer."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Standard matrix product with an explicit conformability check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d arrays, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(v: DenseVector) -> DenseVector:
    """Max-subtracted softmax; positive outputs summing to 1."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax expects a non-empty 1-d vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def layer_norm(v: DenseVector, gain: DenseVector, bias: DenseVector,
               eps: float = 1e-8) -> DenseVector:
    """Normalize to zero mean / unit variance, then apply gain and bias."""
    v = np.asarray(v)
    gain = np.asarray(gain)
    bias = np.asarray(bias)
    if not (v.shape == gain.shape == bias.shape) or v.ndim != 1:
        raise ValueError(
            f"layer_norm dim mismatch: v{v.shape} gain{gain.shape} bias{bias.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = v.mean()
    var = v.var()
    return gain * (v - mu) / np.sqrt(var + eps) + bias


def gaussian_matrix(rows: int, cols: int, rng: SeededRng) -> DenseMatrix:
    """rows x cols of i.i.d. standard normals drawn from the given stream."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return rng.standard_normal((rows, cols))


def require_finite(x: np.ndarray, what: str = "value"):
    """Raise NumericError if any entry of x is NaN or Inf."""
    from .errors import NumericError

    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what} detected")
    return x
