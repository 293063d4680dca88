"""Sequence-parallel low-rank (projected) attention.

Keys and values are projected from sequence length L down to K before the
score computation. Under sequence partitioning each device owns the L/N
token columns of the projection matrices that correspond to its chunk, so it
can form a partial projected key/value tensor (B, Z, K, A) locally. The
partials are summed by circulating them around the ring and accumulating on
arrival (an all-reduce spelled as N-1 ring passes); after that the attention
itself is local, since score rows are only K wide.

No step materializes a tensor with a full-L sequence dimension: everything is
L/N or K. Each worker records the shape of every tensor it allocates so tests
and the CLI can audit exactly that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SparseAttentionConfig
from .cluster import CommLedger, DeviceComm, run_ring
from .errors import ShapeError
from .reference import SparseWeights
from .tensor_ops import as_tensor, matmul, softmax_rows

__all__ = [
    "SparseRingForward",
    "split_projection_columns",
    "sparse_ring_attention_forward",
    "full_length_dims",
]


@dataclass
class SparseRingForward:
    """Per-device (B, Z, L/N, A) outputs, per-device allocation shape logs,
    and the transfer ledger."""

    outputs: list[np.ndarray]
    shape_logs: list[list[tuple]]
    ledger: CommLedger


def split_projection_columns(proj: np.ndarray, n_devices: int) -> list[np.ndarray]:
    """Split a (K, L) projection into per-device (K, L/N) column blocks."""
    proj = as_tensor(proj)
    if proj.ndim != 2:
        raise ShapeError(f"projection must be 2-D, got shape {proj.shape}")
    if proj.shape[1] % n_devices != 0:
        raise ShapeError(
            f"projection length {proj.shape[1]} not divisible by device count {n_devices}"
        )
    return [np.ascontiguousarray(c) for c in np.split(proj, n_devices, axis=1)]


def _ring_accumulate(comm: DeviceComm, partial: np.ndarray, log: list) -> np.ndarray:
    """Sum per-device partials by passing each one all the way around the ring.

    Terms are added in arrival order (own partial first, then each received
    one), so every device holds the same total up to addition grouping.
    """
    total = partial
    buf = partial
    for _ in range(comm.n_devices - 1):
        buf = comm.ring_pass(buf)
        total = total + buf
        log.append(tuple(total.shape))
    return total


def sparse_ring_attention_forward(
    q_chunks,
    k_chunks,
    v_chunks,
    weights: SparseWeights,
    cfg: SparseAttentionConfig,
    *,
    executor: str | None = None,
) -> SparseRingForward:
    """Projected attention on sequence-partitioned (B, Z, L/N, A) chunks.

    The gathered outputs match linformer_forward on the gathered inputs.
    Each device sends 2*(N-1)*B*Z*K*A elements (one circulation for the
    projected keys, one for the projected values).
    """
    base = cfg.base
    expect = (base.batch_size, base.num_heads, base.chunk_len, base.head_size)
    q_chunks = [as_tensor(c) for c in q_chunks]
    k_chunks = [as_tensor(c) for c in k_chunks]
    v_chunks = [as_tensor(c) for c in v_chunks]
    for name, chunks in (("q_chunks", q_chunks), ("k_chunks", k_chunks), ("v_chunks", v_chunks)):
        if len(chunks) != base.num_devices:
            raise ShapeError(f"{name}: got {len(chunks)} chunks for {base.num_devices} devices")
        for i, c in enumerate(chunks):
            if c.shape != expect:
                raise ShapeError(f"{name}[{i}] has shape {c.shape}, expected {expect}")
    key_proj = as_tensor(weights.key_proj)
    value_proj = as_tensor(weights.value_proj)
    proj_shape = (cfg.proj_dim, base.seq_len)
    if key_proj.shape != proj_shape or value_proj.shape != proj_shape:
        raise ShapeError(
            f"projection shapes {key_proj.shape}/{value_proj.shape}, expected {proj_shape}"
        )
    key_shards = split_projection_columns(key_proj, base.num_devices)
    value_shards = split_projection_columns(value_proj, base.num_devices)
    scale = 1.0 / math.sqrt(base.head_size)

    def program(comm: DeviceComm):
        d = comm.device
        log: list[tuple] = []

        def rec(t: np.ndarray) -> np.ndarray:
            log.append(tuple(t.shape))
            return t

        q = rec(q_chunks[d])
        key_partial = rec(matmul(key_shards[d], k_chunks[d]))
        value_partial = rec(matmul(value_shards[d], v_chunks[d]))
        keys_low = _ring_accumulate(comm, key_partial, log)
        values_low = _ring_accumulate(comm, value_partial, log)
        probs = rec(softmax_rows(rec(matmul(q, np.swapaxes(keys_low, -1, -2)) * scale)))
        out = rec(matmul(probs, values_low))
        return out, log

    run = run_ring(base.num_devices, program, executor=executor)
    return SparseRingForward(
        outputs=[r[0] for r in run.results],
        shape_logs=[r[1] for r in run.results],
        ledger=run.ledger,
    )


def full_length_dims(shape_logs, cfg: SparseAttentionConfig) -> list[tuple]:
    """Audit: return every logged shape that carries a full-L dimension.

    Meaningful only when L is distinguishable, i.e. more than one device and
    a projection strictly narrower than the sequence. Callers should treat an
    empty list as a pass.
    """
    seq_len = cfg.base.seq_len
    offenders = []
    for log in shape_logs:
        for shape in log:
            if seq_len in shape:
                offenders.append(shape)
    return offenders
