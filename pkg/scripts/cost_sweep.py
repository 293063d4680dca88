#!/usr/bin/env python3
"""Sweep batch size and sequence length and tabulate where each partitioning
scheme wins on per-device memory, plus the (always tied) communication totals.

Example:
    python3 scripts/cost_sweep.py --Z 12 --A 64 --N 4 --L 512 --batches 1,2,4,8,16,32,64
"""

import argparse

from ringseq import (
    SEQUENCE_PARALLEL,
    TENSOR_PARALLEL,
    AttentionConfig,
    attention_memory,
    comm_volume,
    crossover_threshold,
    format_fraction,
    mlp_memory,
)


def parse_int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--Z", type=int, default=12, help="attention heads")
    parser.add_argument("--A", type=int, default=64, help="head size")
    parser.add_argument("--N", type=int, default=4, help="devices")
    parser.add_argument("--L", type=int, default=512, help="sequence length")
    parser.add_argument(
        "--batches", type=parse_int_list, default=[1, 2, 4, 8, 16, 32, 64],
        help="comma-separated batch sizes to sweep",
    )
    args = parser.parse_args()

    h = args.Z * args.A
    probe = AttentionConfig(
        batch_size=1, seq_len=args.L, hidden_size=h,
        num_heads=args.Z, head_size=args.A, num_devices=args.N,
    )
    print(f"H={h} Z={args.Z} A={args.A} L={args.L} N={args.N}")
    print(f"mlp crossover at B*L = 32H = {format_fraction(crossover_threshold(probe, 'mlp'))}")
    print(f"attention crossover at B*L = 16AZ = {format_fraction(crossover_threshold(probe, 'attention'))}")
    print()

    header = f"{'B':>4} {'B*L':>8} {'mlp seq':>14} {'mlp tp':>14} {'attn seq':>14} {'attn tp':>14}  cheaper"
    print(header)
    print("-" * len(header))
    for b in args.batches:
        cfg = AttentionConfig(
            batch_size=b, seq_len=args.L, hidden_size=h,
            num_heads=args.Z, head_size=args.A, num_devices=args.N,
        )
        mlp_seq = mlp_memory(cfg, SEQUENCE_PARALLEL)
        mlp_tp = mlp_memory(cfg, TENSOR_PARALLEL)
        attn_seq = attention_memory(cfg, SEQUENCE_PARALLEL)
        attn_tp = attention_memory(cfg, TENSOR_PARALLEL)
        verdicts = []
        for seq_mem, tp_mem, label in ((mlp_seq, mlp_tp, "mlp"), (attn_seq, attn_tp, "attn")):
            if seq_mem < tp_mem:
                verdicts.append(f"{label}:seq")
            elif seq_mem > tp_mem:
                verdicts.append(f"{label}:tp")
            else:
                verdicts.append(f"{label}:tie")
        print(
            f"{b:>4} {b * args.L:>8} {format_fraction(mlp_seq):>14} {format_fraction(mlp_tp):>14} "
            f"{format_fraction(attn_seq):>14} {format_fraction(attn_tp):>14}  {' '.join(verdicts)}"
        )

    print()
    cfg = AttentionConfig(
        batch_size=args.batches[0], seq_len=args.L, hidden_size=h,
        num_heads=args.Z, head_size=args.A, num_devices=args.N,
    )
    seq_total = comm_volume(cfg, SEQUENCE_PARALLEL, "total")
    tp_total = comm_volume(cfg, TENSOR_PARALLEL, "total")
    print(
        f"communication per device, both blocks, fwd+bwd (B={args.batches[0]}): "
        f"sequence {format_fraction(seq_total)} elements, "
        f"tensor {format_fraction(tp_total)} elements "
        f"({'equal' if seq_total == tp_total else 'DIFFERENT'})"
    )


if __name__ == "__main__":
    main()
