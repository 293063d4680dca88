"""Single-device reference layers.

These are the oracles the distributed protocols are checked against: scaled
dot-product attention with a hand-derived backward pass, the multi-head layer
around it, the GELU feed-forward block, and low-rank projected attention.
Everything runs on full (unpartitioned) tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AttentionConfig
from .errors import ShapeError
from .tensor_ops import as_tensor, gelu, matmul, merge_heads, softmax_rows, split_heads

__all__ = [
    "AttentionWeights",
    "MlpWeights",
    "SparseWeights",
    "attention_forward",
    "attention_backward",
    "multi_head_forward",
    "multi_head_backward",
    "mlp_forward",
    "linformer_forward",
    "random_attention_weights",
    "random_mlp_weights",
    "random_sparse_weights",
]


@dataclass(frozen=True)
class AttentionWeights:
    """Projections of one multi-head layer: wq/wk/wv are (H, Z*A), wo is (Z*A, H)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass(frozen=True)
class MlpWeights:
    """Feed-forward weights: up is (H, 4H), down is (4H, H)."""

    up: np.ndarray
    down: np.ndarray


@dataclass(frozen=True)
class SparseWeights:
    """Low-rank sequence projections: key_proj and value_proj are (K, L)."""

    key_proj: np.ndarray
    value_proj: np.ndarray


def _swap(t: np.ndarray) -> np.ndarray:
    return np.swapaxes(t, -1, -2)


def attention_forward(q, k, v) -> np.ndarray:
    """softmax(q k^T / sqrt(head_size)) v over the trailing two axes.

    Accepts (S, A) operands or any stack of them, e.g. (B, Z, S, A).
    """
    q = as_tensor(q)
    k = as_tensor(k)
    v = as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key feature sizes disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value row counts disagree: {k.shape} vs {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    probs = softmax_rows(matmul(q, _swap(k)) * scale)
    return matmul(probs, v)


def attention_backward(q, k, v, grad_out, probs=None):
    """Gradients of attention_forward w.r.t. q, k, v.

    Recomputes the probability matrix unless the caller passes the one saved
    from the forward pass. The softmax Jacobian is applied row by row as
    dP = S * (dS - rowsum(dS * S)).
    """
    q = as_tensor(q)
    k = as_tensor(k)
    v = as_tensor(v)
    grad_out = as_tensor(grad_out)
    scale = 1.0 / math.sqrt(q.shape[-1])
    if probs is None:
        probs = softmax_rows(matmul(q, _swap(k)) * scale)
    grad_v = matmul(_swap(probs), grad_out)
    grad_probs = matmul(grad_out, _swap(v))
    grad_scores = probs * (grad_probs - np.sum(grad_probs * probs, axis=-1, keepdims=True))
    grad_scores = grad_scores * scale
    grad_q = matmul(grad_scores, k)
    grad_k = matmul(_swap(grad_scores), q)
    return grad_q, grad_k, grad_v


def _check_layer_shapes(x: np.ndarray, w: AttentionWeights, cfg: AttentionConfig) -> None:
    h, z, a = cfg.hidden_size, cfg.num_heads, cfg.head_size
    if x.shape[-1] != h:
        raise ShapeError(f"input feature size {x.shape[-1]} does not match hidden_size {h}")
    expect_in = (h, z * a)
    expect_out = (z * a, h)
    for name, mat, expect in (
        ("wq", w.wq, expect_in),
        ("wk", w.wk, expect_in),
        ("wv", w.wv, expect_in),
        ("wo", w.wo, expect_out),
    ):
        if mat.shape != expect:
            raise ShapeError(f"{name} has shape {mat.shape}, expected {expect}")


def multi_head_forward(x, w: AttentionWeights, cfg: AttentionConfig) -> np.ndarray:
    """Full multi-head attention layer on (B, L, H) input with replicated weights."""
    x = as_tensor(x)
    _check_layer_shapes(x, w, cfg)
    q = split_heads(matmul(x, w.wq), cfg.num_heads)
    k = split_heads(matmul(x, w.wk), cfg.num_heads)
    v = split_heads(matmul(x, w.wv), cfg.num_heads)
    o = attention_forward(q, k, v)
    return matmul(merge_heads(o), w.wo)


def multi_head_backward(x, w: AttentionWeights, cfg: AttentionConfig, grad_out):
    """Gradients of multi_head_forward w.r.t. the input and all four projections.

    Returns (grad_x, AttentionWeights(grad_wq, grad_wk, grad_wv, grad_wo)).
    """
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    _check_layer_shapes(x, w, cfg)
    if grad_out.shape != x.shape[:-1] + (cfg.hidden_size,):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output of {x.shape}")
    z = cfg.num_heads

    q_flat = matmul(x, w.wq)
    k_flat = matmul(x, w.wk)
    v_flat = matmul(x, w.wv)
    q = split_heads(q_flat, z)
    k = split_heads(k_flat, z)
    v = split_heads(v_flat, z)
    scale = 1.0 / math.sqrt(cfg.head_size)
    probs = softmax_rows(matmul(q, _swap(k)) * scale)
    o_merged = merge_heads(matmul(probs, v))

    # Output projection: fold batch and sequence into one axis for weight grads.
    channels = z * cfg.head_size
    o2 = o_merged.reshape(-1, channels)
    g2 = grad_out.reshape(-1, cfg.hidden_size)
    grad_wo = matmul(_swap(o2), g2)
    grad_o = split_heads(matmul(grad_out, _swap(w.wo)), z)

    grad_q, grad_k, grad_v = attention_backward(q, k, v, grad_o, probs=probs)

    x2 = x.reshape(-1, cfg.hidden_size)
    gq2 = merge_heads(grad_q).reshape(-1, channels)
    gk2 = merge_heads(grad_k).reshape(-1, channels)
    gv2 = merge_heads(grad_v).reshape(-1, channels)
    grad_wq = matmul(_swap(x2), gq2)
    grad_wk = matmul(_swap(x2), gk2)
    grad_wv = matmul(_swap(x2), gv2)
    grad_x = (
        matmul(gq2, _swap(w.wq)) + matmul(gk2, _swap(w.wk)) + matmul(gv2, _swap(w.wv))
    ).reshape(x.shape)
    return grad_x, AttentionWeights(grad_wq, grad_wk, grad_wv, grad_wo)


def mlp_forward(x, w: MlpWeights) -> np.ndarray:
    """GELU feed-forward block: gelu(x @ up) @ down."""
    x = as_tensor(x)
    hidden = x.shape[-1]
    if w.up.shape[0] != hidden or w.down.shape[-1] != hidden or w.up.shape[1] != w.down.shape[0]:
        raise ShapeError(
            f"mlp weights {w.up.shape} / {w.down.shape} do not match input feature size {hidden}"
        )
    return matmul(gelu(matmul(x, w.up)), w.down)


def linformer_forward(q, k, v, sw: SparseWeights) -> np.ndarray:
    """Low-rank attention: keys and values are projected along the sequence axis.

    key_proj/value_proj are (K, L); q/k/v are (L, A) or any stack of them.
    """
    q = as_tensor(q)
    k = as_tensor(k)
    v = as_tensor(v)
    if sw.key_proj.shape[-1] != k.shape[-2] or sw.value_proj.shape[-1] != v.shape[-2]:
        raise ShapeError(
            f"projection length {sw.key_proj.shape} does not match sequence length of {k.shape}"
        )
    k_low = matmul(sw.key_proj, k)
    v_low = matmul(sw.value_proj, v)
    scale = 1.0 / math.sqrt(q.shape[-1])
    probs = softmax_rows(matmul(q, _swap(k_low)) * scale)
    return matmul(probs, v_low)


def random_attention_weights(cfg: AttentionConfig, rng: np.random.Generator) -> AttentionWeights:
    """Gaussian projections scaled by 1/sqrt(H) to keep scores in a sane range."""
    h, channels = cfg.hidden_size, cfg.num_heads * cfg.head_size
    s = 1.0 / math.sqrt(h)
    return AttentionWeights(
        wq=rng.standard_normal((h, channels)) * s,
        wk=rng.standard_normal((h, channels)) * s,
        wv=rng.standard_normal((h, channels)) * s,
        wo=rng.standard_normal((channels, h)) * s,
    )


def random_mlp_weights(hidden_size: int, rng: np.random.Generator) -> MlpWeights:
    s = 1.0 / math.sqrt(hidden_size)
    return MlpWeights(
        up=rng.standard_normal((hidden_size, 4 * hidden_size)) * s,
        down=rng.standard_normal((4 * hidden_size, hidden_size)) * (s / 2.0),
    )


def random_sparse_weights(seq_len: int, proj_dim: int, rng: np.random.Generator) -> SparseWeights:
    s = 1.0 / math.sqrt(seq_len)
    return SparseWeights(
        key_proj=rng.standard_normal((proj_dim, seq_len)) * s,
        value_proj=rng.standard_normal((proj_dim, seq_len)) * s,
    )
