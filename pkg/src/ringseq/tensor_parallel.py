"""Tensor-parallel baseline: weights are partitioned, activations replicated.

The feed-forward block splits the up projection by columns and the down
projection by rows, so each device computes a full-shape partial output and
one all-reduce combines them. The attention layer splits whole heads across
devices, which is why the device count must divide the head count; the output
projection is row-partitioned and again finished by one all-reduce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AttentionConfig, validate_tensor_parallel
from .cluster import DeviceComm, run_ring
from .errors import ConfigError
from .reference import AttentionWeights, MlpWeights
from .tensor_ops import as_tensor, gelu, matmul, merge_heads, softmax_rows, split_heads

__all__ = [
    "ColumnRowSplitWeights",
    "split_mlp_weights",
    "split_attention_heads",
    "tensor_parallel_mlp",
    "tensor_parallel_attention",
]


@dataclass(frozen=True)
class ColumnRowSplitWeights:
    """Per-device MLP shards: up columns (H, 4H/N) and down rows (4H/N, H)."""

    up_columns: list[np.ndarray]
    down_rows: list[np.ndarray]


def split_mlp_weights(w: MlpWeights, n_devices: int) -> ColumnRowSplitWeights:
    """Shard the feed-forward weights; concatenating the shards reconstructs them."""
    width = w.up.shape[1]
    if width % n_devices != 0:
        raise ConfigError(
            f"feed-forward width {width} not divisible by num_devices={n_devices}"
        )
    return ColumnRowSplitWeights(
        up_columns=[np.ascontiguousarray(c) for c in np.split(as_tensor(w.up), n_devices, axis=1)],
        down_rows=[np.ascontiguousarray(r) for r in np.split(as_tensor(w.down), n_devices, axis=0)],
    )


def split_attention_heads(w: AttentionWeights, cfg: AttentionConfig, n_devices: int) -> list[AttentionWeights]:
    """Shard the attention projections by whole heads.

    Device d keeps the input-projection columns and output-projection rows of
    heads [d*Z/N, (d+1)*Z/N). Head h occupies the contiguous channel slice
    [h*A, (h+1)*A), matching split_heads.
    """
    if cfg.num_heads % n_devices != 0:
        raise ConfigError(
            f"num_heads={cfg.num_heads} not divisible by num_devices={n_devices}"
        )
    shards = []
    for d in range(n_devices):
        lo = d * (cfg.num_heads // n_devices) * cfg.head_size
        hi = (d + 1) * (cfg.num_heads // n_devices) * cfg.head_size
        shards.append(
            AttentionWeights(
                wq=np.ascontiguousarray(as_tensor(w.wq)[:, lo:hi]),
                wk=np.ascontiguousarray(as_tensor(w.wk)[:, lo:hi]),
                wv=np.ascontiguousarray(as_tensor(w.wv)[:, lo:hi]),
                wo=np.ascontiguousarray(as_tensor(w.wo)[lo:hi, :]),
            )
        )
    return shards


def tensor_parallel_mlp(x, w: MlpWeights, cfg: AttentionConfig, *, executor: str | None = None):
    """Feed-forward block with column/row-split weights and replicated input.

    Returns (output (B, L, H), ledger). Every device ends up with the same
    output; the reported tensor is device 0's copy.
    """
    validate_tensor_parallel(cfg)
    x = as_tensor(x)
    shards = split_mlp_weights(w, cfg.num_devices)

    def program(comm: DeviceComm):
        d = comm.device
        hidden = gelu(matmul(x, shards.up_columns[d]))
        partial = matmul(hidden, shards.down_rows[d])
        return comm.all_reduce(partial)

    run = run_ring(cfg.num_devices, program, executor=executor)
    return run.results[0], run.ledger


def tensor_parallel_attention(x, w: AttentionWeights, cfg: AttentionConfig, *, executor: str | None = None):
    """Multi-head attention with heads split across devices, input replicated.

    Each device runs its own heads over the full sequence and the partial
    output projections are summed with one all-reduce. Returns
    (output (B, L, H), ledger).
    """
    validate_tensor_parallel(cfg)
    x = as_tensor(x)
    shards = split_attention_heads(w, cfg, cfg.num_devices)
    heads_per_device = cfg.num_heads // cfg.num_devices
    scale = 1.0 / math.sqrt(cfg.head_size)

    def program(comm: DeviceComm):
        sw = shards[comm.device]
        q = split_heads(matmul(x, sw.wq), heads_per_device)
        k = split_heads(matmul(x, sw.wk), heads_per_device)
        v = split_heads(matmul(x, sw.wv), heads_per_device)
        probs = softmax_rows(matmul(q, np.swapaxes(k, -1, -2)) * scale)
        merged = merge_heads(matmul(probs, v))
        return comm.all_reduce(matmul(merged, sw.wo))

    run = run_ring(cfg.num_devices, program, executor=executor)
    return run.results[0], run.ledger
