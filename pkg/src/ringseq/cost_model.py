"""Analytical per-device memory and communication costs, in exact rationals.

All quantities are element counts (multiply by 8 for float64 bytes, by 2 for
half precision). Memory counts cover one layer's weights plus live
activations on a single device; communication counts are elements sent per
device per layer pass under the ring accounting used by the simulator, so
simulated ledgers can be compared to these formulas exactly.

Per pass and block, one all-reduce of a (B, L, H) activation costs
2*(N-1)/N * B*L*H = 2*(N-1)*B*Z*(L/N)*A elements per device, which makes the
tensor-parallel scheme (two all-reduces forward, two backward) and the
sequence-parallel scheme (key+value circulations forward; value and key
circulations plus two gradient all-reduces backward) add up to the same
total of 8*(N-1)*B*Z*(L/N)*A.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

from .config import AttentionConfig, SparseAttentionConfig
from .errors import ConfigError

__all__ = [
    "SEQUENCE_PARALLEL",
    "TENSOR_PARALLEL",
    "SPARSE_SEQUENCE_PARALLEL",
    "mlp_memory",
    "attention_memory",
    "sparse_attention_memory",
    "comm_volume",
    "sparse_comm_volume",
    "crossover_threshold",
    "CostReport",
    "build_reports",
    "reports_to_csv",
    "reports_to_json_obj",
    "format_fraction",
]

SEQUENCE_PARALLEL = "sequence-parallel"
TENSOR_PARALLEL = "tensor-parallel"
SPARSE_SEQUENCE_PARALLEL = "sparse-sequence-parallel"

_DENSE_SCHEMES = (SEQUENCE_PARALLEL, TENSOR_PARALLEL)

CSV_COLUMNS = [
    "scheme",
    "block",
    "B",
    "L",
    "H",
    "A",
    "Z",
    "N",
    "K",
    "memory_elements",
    "comm_fwd",
    "comm_bwd",
    "comm_total",
]


def format_fraction(value: Fraction) -> str:
    """Exact text form: plain integer when integral, 'p/q' otherwise."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _check_scheme(scheme: str) -> None:
    if scheme not in _DENSE_SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}, expected one of {_DENSE_SCHEMES}")


def mlp_memory(cfg: AttentionConfig, scheme: str) -> Fraction:
    """Per-device elements for the feed-forward block (weights + activations)."""
    _check_scheme(scheme)
    b, length, h, n = cfg.batch_size, cfg.seq_len, cfg.hidden_size, cfg.num_devices
    if scheme == TENSOR_PARALLEL:
        return Fraction(32 * h * h, n) + Fraction(4 * b * length * h, n) + b * length * h
    return Fraction(32 * h * h) + Fraction(5 * b * length * h, n)


def attention_memory(cfg: AttentionConfig, scheme: str) -> Fraction:
    """Per-device elements for the multi-head attention block."""
    _check_scheme(scheme)
    b, length, h, n = cfg.batch_size, cfg.seq_len, cfg.hidden_size, cfg.num_devices
    a, z = cfg.head_size, cfg.num_heads
    if scheme == TENSOR_PARALLEL:
        return (
            Fraction(16 * a * z * h, n)
            + Fraction(4 * b * length * z * a, n)
            + Fraction(b * z * length * length, n)
            + b * length * h
        )
    return (
        Fraction(16 * a * z * h)
        + Fraction(4 * b * z * length * a, n)
        + Fraction(b * z * length * length, n)
        + Fraction(b * length * h, n)
    )


def sparse_attention_memory(cfg: SparseAttentionConfig) -> Fraction:
    """Per-device elements for the projected attention block (sequence scheme)."""
    base = cfg.base
    b, length, h, n = base.batch_size, base.seq_len, base.hidden_size, base.num_devices
    a, z, k = base.head_size, base.num_heads, cfg.proj_dim
    return (
        Fraction(2 * a * z * h)
        + Fraction(2 * b * z * length * a, n)
        + Fraction(b * z * length * k, n)
        + Fraction(b * length * h, n)
        + Fraction(2 * b * z * k * a)
    )


def _collective_unit(cfg: AttentionConfig) -> Fraction:
    # 2*(N-1)*B*Z*(L/N)*A, the per-device cost of one (B, L, H) all-reduce
    # and also of one key or value circulation pair in the ring forward.
    b, length, n = cfg.batch_size, cfg.seq_len, cfg.num_devices
    a, z = cfg.head_size, cfg.num_heads
    return Fraction(2 * (n - 1) * b * z * length * a, n)


def comm_volume(cfg: AttentionConfig, scheme: str, direction: str = "total", block: str = "total") -> Fraction:
    """Elements sent per device for one layer pass.

    direction is 'forward', 'backward' or 'total'; block is 'mlp',
    'attention' or 'total' (both blocks).
    """
    _check_scheme(scheme)
    if direction not in ("forward", "backward", "total"):
        raise ConfigError(f"unknown direction {direction!r}")
    if block not in ("mlp", "attention", "total"):
        raise ConfigError(f"unknown block {block!r}")
    unit = _collective_unit(cfg)
    if scheme == TENSOR_PARALLEL:
        per_block = {"mlp": {"forward": unit, "backward": unit},
                     "attention": {"forward": unit, "backward": unit}}
    else:
        per_block = {"mlp": {"forward": Fraction(0), "backward": Fraction(0)},
                     "attention": {"forward": unit, "backward": 3 * unit}}
    blocks = ("mlp", "attention") if block == "total" else (block,)
    directions = ("forward", "backward") if direction == "total" else (direction,)
    return sum((per_block[b][d] for b in blocks for d in directions), Fraction(0))


def sparse_comm_volume(cfg: SparseAttentionConfig) -> Fraction:
    """Elements sent per device by the projected-attention forward protocol:
    (N-1)*2*B*Z*K*A for the two partial circulations."""
    base = cfg.base
    return Fraction(
        (base.num_devices - 1) * 2 * base.batch_size * base.num_heads * cfg.proj_dim * base.head_size
    )


def crossover_threshold(cfg: AttentionConfig, block: str) -> Fraction | None:
    """B*L value where the schemes' memory costs cross for the given block.

    The sequence scheme uses less memory exactly when B*L exceeds the
    returned threshold; at equality the costs tie. With one device the
    schemes coincide and there is no crossover (None).
    """
    if block not in ("mlp", "attention"):
        raise ConfigError(f"unknown block {block!r}")
    if cfg.num_devices == 1:
        return None
    if block == "mlp":
        return Fraction(32 * cfg.hidden_size)
    return Fraction(16 * cfg.head_size * cfg.num_heads)


@dataclass(frozen=True)
class CostReport:
    """One (scheme, block, config) row of the cost table."""

    scheme: str
    block: str
    batch_size: int
    seq_len: int
    hidden_size: int
    head_size: int
    num_heads: int
    num_devices: int
    proj_dim: int | None
    memory_elements: Fraction
    comm_forward_elements: Fraction
    comm_backward_elements: Fraction

    @property
    def comm_total_elements(self) -> Fraction:
        return self.comm_forward_elements + self.comm_backward_elements

    def as_row(self) -> list[str]:
        return [
            self.scheme,
            self.block,
            str(self.batch_size),
            str(self.seq_len),
            str(self.hidden_size),
            str(self.head_size),
            str(self.num_heads),
            str(self.num_devices),
            "" if self.proj_dim is None else str(self.proj_dim),
            format_fraction(self.memory_elements),
            format_fraction(self.comm_forward_elements),
            format_fraction(self.comm_backward_elements),
            format_fraction(self.comm_total_elements),
        ]

    def as_json_obj(self) -> dict:
        return {
            "scheme": self.scheme,
            "block": self.block,
            "B": self.batch_size,
            "L": self.seq_len,
            "H": self.hidden_size,
            "A": self.head_size,
            "Z": self.num_heads,
            "N": self.num_devices,
            "K": self.proj_dim,
            "memory_elements": format_fraction(self.memory_elements),
            "memory_bytes_fp64": format_fraction(8 * self.memory_elements),
            "memory_bytes_fp16": format_fraction(2 * self.memory_elements),
            "comm_fwd": format_fraction(self.comm_forward_elements),
            "comm_bwd": format_fraction(self.comm_backward_elements),
            "comm_total": format_fraction(self.comm_total_elements),
        }


def _report(cfg: AttentionConfig, scheme: str, block: str, memory: Fraction,
            fwd: Fraction, bwd: Fraction, proj_dim: int | None = None) -> CostReport:
    return CostReport(
        scheme=scheme,
        block=block,
        batch_size=cfg.batch_size,
        seq_len=cfg.seq_len,
        hidden_size=cfg.hidden_size,
        head_size=cfg.head_size,
        num_heads=cfg.num_heads,
        num_devices=cfg.num_devices,
        proj_dim=proj_dim,
        memory_elements=memory,
        comm_forward_elements=fwd,
        comm_backward_elements=bwd,
    )


def build_reports(cfg: AttentionConfig, proj_dim: int | None = None) -> list[CostReport]:
    """All cost rows for one config: both dense schemes and, when proj_dim is
    given, the projected attention row. Row order is fixed."""
    rows = []
    for scheme in (SEQUENCE_PARALLEL, TENSOR_PARALLEL):
        rows.append(_report(
            cfg, scheme, "mlp", mlp_memory(cfg, scheme),
            comm_volume(cfg, scheme, "forward", "mlp"),
            comm_volume(cfg, scheme, "backward", "mlp"),
        ))
        rows.append(_report(
            cfg, scheme, "attention", attention_memory(cfg, scheme),
            comm_volume(cfg, scheme, "forward", "attention"),
            comm_volume(cfg, scheme, "backward", "attention"),
        ))
    if proj_dim is not None:
        sparse_cfg = SparseAttentionConfig(base=cfg, proj_dim=proj_dim)
        rows.append(_report(
            cfg, SPARSE_SEQUENCE_PARALLEL, "attention",
            sparse_attention_memory(sparse_cfg),
            sparse_comm_volume(sparse_cfg),
            Fraction(0),
            proj_dim=proj_dim,
        ))
    return rows


def reports_to_csv(reports) -> str:
    """Fixed-column CSV text for a list of CostReport rows."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow(r.as_row())
    return out.getvalue()


def reports_to_json_obj(reports) -> list[dict]:
    return [r.as_json_obj() for r in reports]
