"""Dense float64 tensor primitives with a fixed, reproducible operation order.

All functions are pure (inputs are never mutated) and operate on row-major
float64 ndarrays. Matrix products accumulate along the inner dimension in
ascending index order, one rank-1 update per inner index, so every output
element is the plain left-to-right sum a[i,0]*b[0,j] + a[i,1]*b[1,j] + ...
This makes results bit-for-bit reproducible and independent of BLAS blocking,
which the distributed protocols rely on: a block of a product computed on one
device is bitwise equal to the same block sliced out of the full product.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

__all__ = [
    "as_tensor",
    "make_rng",
    "matmul",
    "softmax_rows",
    "gelu",
    "split_heads",
    "merge_heads",
]

_SQRT2 = math.sqrt(2.0)


def as_tensor(x) -> np.ndarray:
    """Coerce to a float64 ndarray (no copy when already one)."""
    return np.asarray(x, dtype=np.float64)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator. Identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a, b) -> np.ndarray:
    """Matrix product over the trailing two axes, leading axes broadcast.

    Accumulation over the inner dimension runs in ascending index order
    (see module docstring), so the result matches a naive triple loop
    exactly rather than whatever order an optimized BLAS kernel picks.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs operands with at least 2 dimensions, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    try:
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} vs {b.shape}") from exc
    rows, inner = a.shape[-2:]
    cols = b.shape[-1]
    aa = np.broadcast_to(a, lead + (rows, inner))
    bb = np.broadcast_to(b, lead + (inner, cols))
    out = np.zeros(lead + (rows, cols))
    tmp = np.empty_like(out)
    for k in range(inner):
        np.multiply(aa[..., :, k : k + 1], bb[..., k : k + 1, :], out=tmp)
        np.add(out, tmp, out=out)
    return out


def softmax_rows(t) -> np.ndarray:
    """Row-stabilized softmax along the last axis."""
    t = as_tensor(t)
    if t.ndim < 1 or t.shape[-1] < 1:
        raise ShapeError(f"softmax_rows needs a non-empty last axis, got shape {t.shape}")
    if not np.isfinite(t).all():
        raise NumericError("softmax_rows requires finite inputs")
    shifted = t - np.max(t, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def gelu(t) -> np.ndarray:
    """Exact GELU, x * Phi(x) with the Gaussian CDF (erf form, no tanh fit)."""
    t = as_tensor(t)
    return t * (0.5 * (1.0 + erf(t / _SQRT2)))


def split_heads(t, num_heads: int) -> np.ndarray:
    """(..., S, Z*A) -> (..., Z, S, A): factor the channel axis into heads.

    Head h takes the contiguous channel slice [h*A, (h+1)*A).
    """
    t = as_tensor(t)
    if t.ndim < 2:
        raise ShapeError(f"split_heads needs at least 2 dimensions, got shape {t.shape}")
    if num_heads < 1:
        raise ShapeError(f"split_heads needs a positive head count, got {num_heads}")
    channels = t.shape[-1]
    if channels % num_heads != 0:
        raise ShapeError(
            f"split_heads: channel dimension {channels} not divisible by {num_heads} heads"
        )
    head_size = channels // num_heads
    expanded = t.reshape(t.shape[:-1] + (num_heads, head_size))
    return np.ascontiguousarray(np.swapaxes(expanded, -3, -2))


def merge_heads(t) -> np.ndarray:
    """(..., Z, S, A) -> (..., S, Z*A): exact inverse of split_heads."""
    t = as_tensor(t)
    if t.ndim < 3:
        raise ShapeError(f"merge_heads needs at least 3 dimensions, got shape {t.shape}")
    swapped = np.ascontiguousarray(np.swapaxes(t, -3, -2))
    return swapped.reshape(swapped.shape[:-2] + (swapped.shape[-2] * swapped.shape[-1],))
