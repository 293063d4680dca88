"""Sequence-parallel self-attention over the simulated ring.

Each device owns a contiguous chunk of L/N tokens and the full (replicated)
layer weights. The forward pass runs in two stages:

* stage 1 circulates key chunks for N-1 hops; each device computes its score
  block against every origin and assembles the complete score rows for its
  own queries, then applies softmax locally;
* stage 2 circulates value chunks and accumulates the output as the sum of
  per-origin block products, taken in ascending origin index order.

The backward pass re-circulates value chunks (to build the probability
gradients), applies the softmax Jacobian locally, re-circulates key chunks
(for the query gradients), and sums each device's full-length key/value
gradient contributions with two all-reduces, after which every device keeps
its own chunk. Received chunks are never cached across stages, so no device
ever stores a full-length key or value buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AttentionConfig
from .errors import ShapeError, StateError
from .cluster import CommLedger, DeviceComm, run_ring
from .reference import AttentionWeights, MlpWeights, mlp_forward
from .tensor_ops import as_tensor, matmul, merge_heads, softmax_rows, split_heads

__all__ = [
    "RingAttentionForward",
    "RingAttentionBackward",
    "ring_attention_forward",
    "ring_attention_backward",
    "sequence_parallel_attention",
    "sequence_parallel_mlp",
]


@dataclass
class RingAttentionForward:
    """Per-device outputs (B, Z, L/N, A), saved probability panels (B, Z, L/N, L),
    and the transfer ledger."""

    outputs: list[np.ndarray]
    probs: list[np.ndarray]
    ledger: CommLedger


@dataclass
class RingAttentionBackward:
    """Per-device gradient chunks for queries, keys and values, plus the ledger."""

    grad_q: list[np.ndarray]
    grad_k: list[np.ndarray]
    grad_v: list[np.ndarray]
    ledger: CommLedger


def _swap(t: np.ndarray) -> np.ndarray:
    return np.swapaxes(t, -1, -2)


def _ring_origins(comm: DeviceComm, first_buf: np.ndarray):
    """Yield (origin_device, buffer) for the local chunk and the N-1 received ones.

    Buffers move toward the next device, so hop h delivers the chunk that
    started on device (self - h) mod N.
    """
    buf = first_buf
    origin = comm.device
    yield origin, buf
    for _ in range(comm.n_devices - 1):
        buf = comm.ring_pass(buf)
        origin = (origin - 1) % comm.n_devices
        yield origin, buf


def _ascending_sum(terms: list[np.ndarray]) -> np.ndarray:
    out = terms[0]
    for term in terms[1:]:
        out = out + term
    return out


def _score_panel(comm: DeviceComm, q: np.ndarray, k: np.ndarray, scale: float) -> np.ndarray:
    """Stage 1: complete post-softmax score rows for this device's queries."""
    blocks: list = [None] * comm.n_devices
    for origin, buf in _ring_origins(comm, k):
        blocks[origin] = matmul(q, _swap(buf)) * scale
    return softmax_rows(np.concatenate(blocks, axis=-1))


def _apply_values(comm: DeviceComm, probs: np.ndarray, v: np.ndarray, chunk_len: int) -> np.ndarray:
    """Stage 2: output chunk as the origin-ascending sum of block products."""
    products: list = [None] * comm.n_devices
    for origin, buf in _ring_origins(comm, v):
        block = probs[..., origin * chunk_len : (origin + 1) * chunk_len]
        products[origin] = matmul(block, buf)
    return _ascending_sum(products)


def _check_chunks(name: str, chunks, cfg: AttentionConfig, expect_shape: tuple) -> list[np.ndarray]:
    chunks = [as_tensor(c) for c in chunks]
    if len(chunks) != cfg.num_devices:
        raise ShapeError(
            f"{name}: got {len(chunks)} chunks for {cfg.num_devices} devices"
        )
    for i, c in enumerate(chunks):
        if c.shape != expect_shape:
            raise ShapeError(
                f"{name}[{i}] has shape {c.shape}, expected {expect_shape}"
            )
    return chunks


def _head_chunk_shape(cfg: AttentionConfig) -> tuple:
    return (cfg.batch_size, cfg.num_heads, cfg.chunk_len, cfg.head_size)


def ring_attention_forward(q_chunks, k_chunks, v_chunks, cfg: AttentionConfig, *, executor: str | None = None) -> RingAttentionForward:
    """Distributed attention forward over per-device (B, Z, L/N, A) chunks.

    The gathered outputs match single-device attention on the gathered
    inputs; with one device the result is bitwise identical to it. Each
    device sends 2*(N-1)*B*Z*(L/N)*A elements (keys then values).
    """
    shape = _head_chunk_shape(cfg)
    q_chunks = _check_chunks("q_chunks", q_chunks, cfg, shape)
    k_chunks = _check_chunks("k_chunks", k_chunks, cfg, shape)
    v_chunks = _check_chunks("v_chunks", v_chunks, cfg, shape)
    scale = 1.0 / math.sqrt(cfg.head_size)
    chunk_len = cfg.chunk_len

    def program(comm: DeviceComm):
        d = comm.device
        probs = _score_panel(comm, q_chunks[d], k_chunks[d], scale)
        out = _apply_values(comm, probs, v_chunks[d], chunk_len)
        return out, probs

    run = run_ring(cfg.num_devices, program, executor=executor)
    outputs = [r[0] for r in run.results]
    probs = [r[1] for r in run.results]
    return RingAttentionForward(outputs, probs, run.ledger)


def ring_attention_backward(q_chunks, k_chunks, v_chunks, probs, grad_chunks, cfg: AttentionConfig, *, executor: str | None = None) -> RingAttentionBackward:
    """Gradients of ring_attention_forward w.r.t. the query/key/value chunks.

    `probs` are the saved per-device probability panels from the forward
    pass. Each device sends 6*(N-1)*B*Z*(L/N)*A elements: one value and one
    key circulation plus two all-reduces of full-length gradient partials.
    """
    shape = _head_chunk_shape(cfg)
    q_chunks = _check_chunks("q_chunks", q_chunks, cfg, shape)
    k_chunks = _check_chunks("k_chunks", k_chunks, cfg, shape)
    v_chunks = _check_chunks("v_chunks", v_chunks, cfg, shape)
    grad_chunks = _check_chunks("grad_chunks", grad_chunks, cfg, shape)
    if probs is None:
        raise StateError(
            "ring_attention_backward needs the probability panels saved by ring_attention_forward"
        )
    panel_shape = (cfg.batch_size, cfg.num_heads, cfg.chunk_len, cfg.seq_len)
    probs = _check_chunks("probs", probs, cfg, panel_shape)
    scale = 1.0 / math.sqrt(cfg.head_size)
    n = cfg.num_devices
    chunk_len = cfg.chunk_len

    def block(panel: np.ndarray, i: int) -> np.ndarray:
        return panel[..., i * chunk_len : (i + 1) * chunk_len]

    def program(comm: DeviceComm):
        d = comm.device
        panel = probs[d]
        grad_out = grad_chunks[d]

        # Circulate value chunks: gradient w.r.t. the probability panel.
        grad_probs_blocks: list = [None] * n
        for origin, buf in _ring_origins(comm, v_chunks[d]):
            grad_probs_blocks[origin] = matmul(grad_out, _swap(buf))
        grad_probs = np.concatenate(grad_probs_blocks, axis=-1)

        # Softmax Jacobian, then fold in the 1/sqrt(A) score scaling.
        grad_scores = panel * (
            grad_probs - np.sum(grad_probs * panel, axis=-1, keepdims=True)
        )
        grad_scores = grad_scores * scale

        # Circulate key chunks: query gradient, ascending origin order.
        grad_q_products: list = [None] * n
        for origin, buf in _ring_origins(comm, k_chunks[d]):
            grad_q_products[origin] = matmul(block(grad_scores, origin), buf)
        grad_q = _ascending_sum(grad_q_products)

        # Full-length key/value gradient partials, summed across devices.
        full_shape = (cfg.batch_size, cfg.num_heads, cfg.seq_len, cfg.head_size)
        grad_k_part = np.zeros(full_shape)
        grad_v_part = np.zeros(full_shape)
        for i in range(n):
            lo, hi = i * chunk_len, (i + 1) * chunk_len
            grad_k_part[..., lo:hi, :] = matmul(_swap(block(grad_scores, i)), q_chunks[d])
            grad_v_part[..., lo:hi, :] = matmul(_swap(block(panel, i)), grad_out)
        grad_k_full = comm.all_reduce(grad_k_part)
        grad_v_full = comm.all_reduce(grad_v_part)
        lo, hi = d * chunk_len, (d + 1) * chunk_len
        return grad_q, grad_k_full[..., lo:hi, :].copy(), grad_v_full[..., lo:hi, :].copy()

    run = run_ring(n, program, executor=executor)
    return RingAttentionBackward(
        grad_q=[r[0] for r in run.results],
        grad_k=[r[1] for r in run.results],
        grad_v=[r[2] for r in run.results],
        ledger=run.ledger,
    )


def sequence_parallel_attention(x_chunks, weights: AttentionWeights, cfg: AttentionConfig, *, executor: str | None = None):
    """Multi-head attention layer with sequence-partitioned (B, L/N, H) inputs.

    Weights are replicated, so the projections are local; only the ring
    attention stages communicate. Returns (per-device output chunks, ledger).
    """
    expect = (cfg.batch_size, cfg.chunk_len, cfg.hidden_size)
    x_chunks = _check_chunks("x_chunks", x_chunks, cfg, expect)
    scale = 1.0 / math.sqrt(cfg.head_size)
    chunk_len = cfg.chunk_len

    def program(comm: DeviceComm):
        x = x_chunks[comm.device]
        q = split_heads(matmul(x, weights.wq), cfg.num_heads)
        k = split_heads(matmul(x, weights.wk), cfg.num_heads)
        v = split_heads(matmul(x, weights.wv), cfg.num_heads)
        probs = _score_panel(comm, q, k, scale)
        out = _apply_values(comm, probs, v, chunk_len)
        return matmul(merge_heads(out), weights.wo)

    run = run_ring(cfg.num_devices, program, executor=executor)
    return run.results, run.ledger


def sequence_parallel_mlp(x_chunks, weights: MlpWeights, *, executor: str | None = None):
    """Feed-forward block on sequence-partitioned inputs: purely local.

    Token rows never interact in the MLP, so nothing is communicated and the
    returned ledger stays at zero.
    """
    x_chunks = [as_tensor(c) for c in x_chunks]

    def program(comm: DeviceComm):
        return mlp_forward(x_chunks[comm.device], weights)

    run = run_ring(len(x_chunks), program, executor=executor)
    return run.results, run.ledger
