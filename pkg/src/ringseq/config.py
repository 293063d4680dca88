"""Model and partitioning configuration."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class AttentionConfig:
    """Shapes for one attention layer and how it is partitioned.

    batch_size, seq_len, hidden_size describe the activations; hidden_size
    must factor exactly into num_heads * head_size. num_devices is the ring
    size; sequence partitioning needs seq_len divisible by it.
    """

    batch_size: int
    seq_len: int
    hidden_size: int
    num_heads: int
    head_size: int
    num_devices: int = 1

    def __post_init__(self):
        for name in ("batch_size", "seq_len", "hidden_size", "num_heads", "head_size", "num_devices"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_size != self.num_heads * self.head_size:
            raise ConfigError(
                f"hidden_size={self.hidden_size} must equal "
                f"num_heads*head_size={self.num_heads * self.head_size}"
            )
        if self.seq_len % self.num_devices != 0:
            raise ConfigError(
                f"seq_len={self.seq_len} not divisible by num_devices={self.num_devices}"
            )

    @property
    def chunk_len(self) -> int:
        """Tokens owned by each device under sequence partitioning."""
        return self.seq_len // self.num_devices


@dataclass(frozen=True)
class SparseAttentionConfig:
    """AttentionConfig plus the projected sequence length for low-rank attention."""

    base: AttentionConfig
    proj_dim: int

    def __post_init__(self):
        if not isinstance(self.proj_dim, int) or self.proj_dim < 1:
            raise ConfigError(f"proj_dim must be a positive integer, got {self.proj_dim!r}")


def validate_tensor_parallel(cfg: AttentionConfig) -> None:
    """Reject device counts a head-partitioned layer cannot support."""
    if cfg.num_heads % cfg.num_devices != 0:
        raise ConfigError(
            f"num_heads={cfg.num_heads} not divisible by num_devices={cfg.num_devices}"
        )
    if (4 * cfg.hidden_size) % cfg.num_devices != 0:
        raise ConfigError(
            f"feed-forward width {4 * cfg.hidden_size} not divisible by "
            f"num_devices={cfg.num_devices}"
        )
