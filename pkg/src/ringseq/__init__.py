"""Sequence-parallel attention on a simulated device ring.

Single-device reference layers, a deterministic ring simulator with exact
transfer accounting, the distributed attention protocols (dense, head-split
baseline, and low-rank projected), and analytical cost models they are
checked against.
"""

from .config import AttentionConfig, SparseAttentionConfig, validate_tensor_parallel
from .cluster import (
    EXECUTOR_ENV_VAR,
    EXECUTORS,
    CommLedger,
    DeviceComm,
    DeviceTraffic,
    RingRun,
    RingTopology,
    ShardedSequence,
    gather_sequence,
    resolve_executor,
    run_ring,
    scatter_sequence,
)
from .cost_model import (
    SEQUENCE_PARALLEL,
    SPARSE_SEQUENCE_PARALLEL,
    TENSOR_PARALLEL,
    CostReport,
    attention_memory,
    build_reports,
    comm_volume,
    crossover_threshold,
    format_fraction,
    mlp_memory,
    reports_to_csv,
    reports_to_json_obj,
    sparse_attention_memory,
    sparse_comm_volume,
)
from .errors import (
    ConfigError,
    DeadlockError,
    NumericError,
    ProtocolError,
    ShapeError,
    StateError,
)
from .reference import (
    AttentionWeights,
    MlpWeights,
    SparseWeights,
    attention_backward,
    attention_forward,
    linformer_forward,
    mlp_forward,
    multi_head_backward,
    multi_head_forward,
    random_attention_weights,
    random_mlp_weights,
    random_sparse_weights,
)
from .ring_attention import (
    RingAttentionBackward,
    RingAttentionForward,
    ring_attention_backward,
    ring_attention_forward,
    sequence_parallel_attention,
    sequence_parallel_mlp,
)
from .sparse_attention import (
    SparseRingForward,
    full_length_dims,
    sparse_ring_attention_forward,
    split_projection_columns,
)
from .tensor_ops import (
    gelu,
    make_rng,
    matmul,
    merge_heads,
    softmax_rows,
    split_heads,
)
from .tensor_parallel import (
    ColumnRowSplitWeights,
    split_attention_heads,
    split_mlp_weights,
    tensor_parallel_attention,
    tensor_parallel_mlp,
)

__version__ = "0.1.0"
