"""Independent oracle implementations used only by the tests.

Deliberately written with plain Python loops and stdlib math (not the
package's tensor ops), so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_triple_loop(a, b) -> np.ndarray:
    """2-D matrix product with the naive i/j/k triple loop, k ascending."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    assert a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0]
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def matmul_batched_loop(a, b) -> np.ndarray:
    """Triple-loop product applied to every leading-index pair of 4-D stacks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    assert a.ndim == 4 and b.ndim == 4 and a.shape[:2] == b.shape[:2]
    out = np.zeros(a.shape[:2] + (a.shape[2], b.shape[3]))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i, j] = matmul_triple_loop(a[i, j], b[i, j])
    return out


def softmax_row_loop(row) -> list[float]:
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def attention_single_head_loop(q, k, v) -> np.ndarray:
    """Scaled dot-product attention on 2-D (S, A) operands, all loops."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s_q, a_dim = q.shape
    s_k = k.shape[0]
    scale = 1.0 / math.sqrt(a_dim)
    out = np.zeros((s_q, v.shape[1]))
    for r in range(s_q):
        scores = [
            sum(q[r, c] * k[s, c] for c in range(a_dim)) * scale for s in range(s_k)
        ]
        probs = softmax_row_loop(scores)
        for c in range(v.shape[1]):
            out[r, c] = sum(probs[s] * v[s, c] for s in range(s_k))
    return out


def attention_per_head_loop(q, k, v) -> np.ndarray:
    """Batched attention computed head by head with the loop oracle."""
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros(q.shape[:-1] + (np.asarray(v).shape[-1],))
    for b in range(q.shape[0]):
        for z in range(q.shape[1]):
            out[b, z] = attention_single_head_loop(q[b, z], k[b, z], v[b, z])
    return out


def gelu_scalar(x: float) -> float:
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def central_difference(f, x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_grad = grad.reshape(-1)
    for idx in range(x.size):
        up = x.copy()
        up.reshape(-1)[idx] += h
        down = x.copy()
        down.reshape(-1)[idx] -= h
        flat_grad[idx] = (f(up) - f(down)) / (2.0 * h)
    return grad


def relative_error(got, want) -> float:
    """Max of |got - want| / max(|got|, |want|, 1): relative with a unit floor."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1.0)
    return float(np.max(np.abs(got - want) / denom))


def chunks_of(x, n: int, axis: int = -2) -> list[np.ndarray]:
    """Contiguous equal split along the sequence axis, as plain arrays."""
    return [np.ascontiguousarray(c) for c in np.split(np.asarray(x, dtype=np.float64), n, axis=axis)]
