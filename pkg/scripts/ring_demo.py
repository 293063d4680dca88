#!/usr/bin/env python3
"""Run the distributed attention protocol once and reconcile its measured
transfer ledger with the analytical communication model.

Runs forward and backward on random inputs, compares the gathered results
against the single-device reference, and prints the per-device ledger next to
the closed-form element counts.

Example:
    python3 scripts/ring_demo.py --B 2 --Z 4 --L 32 --A 8 --N 4 --executor concurrent
"""

import argparse

import numpy as np

from ringseq import (
    SEQUENCE_PARALLEL,
    AttentionConfig,
    attention_backward,
    attention_forward,
    comm_volume,
    format_fraction,
    gather_sequence,
    make_rng,
    ring_attention_backward,
    ring_attention_forward,
    scatter_sequence,
)


def chunks(x, n):
    return [s.chunk for s in scatter_sequence(x, n)]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--B", type=int, default=2, help="batch size")
    parser.add_argument("--Z", type=int, default=4, help="attention heads")
    parser.add_argument("--L", type=int, default=32, help="sequence length")
    parser.add_argument("--A", type=int, default=8, help="head size")
    parser.add_argument("--N", type=int, default=4, help="devices")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--executor", choices=("sequential", "concurrent"), default=None)
    args = parser.parse_args()

    cfg = AttentionConfig(
        batch_size=args.B, seq_len=args.L, hidden_size=args.Z * args.A,
        num_heads=args.Z, head_size=args.A, num_devices=args.N,
    )
    rng = make_rng(args.seed)
    shape = (cfg.batch_size, cfg.num_heads, cfg.seq_len, cfg.head_size)
    q, k, v = (rng.standard_normal(shape) for _ in range(3))
    grad_out = rng.standard_normal(shape)
    n = cfg.num_devices

    fwd = ring_attention_forward(
        chunks(q, n), chunks(k, n), chunks(v, n), cfg, executor=args.executor
    )
    bwd = ring_attention_backward(
        chunks(q, n), chunks(k, n), chunks(v, n), fwd.probs, chunks(grad_out, n), cfg,
        executor=args.executor,
    )

    out_diff = float(np.max(np.abs(gather_sequence(fwd.outputs) - attention_forward(q, k, v))))
    ref_q, ref_k, ref_v = attention_backward(q, k, v, grad_out)
    grad_diff = max(
        float(np.max(np.abs(gather_sequence(bwd.grad_q) - ref_q))),
        float(np.max(np.abs(gather_sequence(bwd.grad_k) - ref_k))),
        float(np.max(np.abs(gather_sequence(bwd.grad_v) - ref_v))),
    )
    print(f"config: B={cfg.batch_size} Z={cfg.num_heads} L={cfg.seq_len} A={cfg.head_size} N={n}")
    print(f"forward max |diff| vs single device:  {out_diff:.3e}")
    print(f"backward max |diff| vs single device: {grad_diff:.3e}")
    print()

    want_fwd = comm_volume(cfg, SEQUENCE_PARALLEL, "forward", "attention")
    want_bwd = comm_volume(cfg, SEQUENCE_PARALLEL, "backward", "attention")
    print(f"analytical per device: forward {format_fraction(want_fwd)}, backward {format_fraction(want_bwd)} elements")
    print(f"{'device':>6} {'fwd ring':>10} {'bwd ring':>10} {'bwd allreduce':>14} {'total':>10} match")
    for d in range(n):
        f_traffic = fwd.ledger.devices[d]
        b_traffic = bwd.ledger.devices[d]
        total = f_traffic.total_elements() + b_traffic.total_elements()
        ok = f_traffic.total_elements() == want_fwd and b_traffic.total_elements() == want_bwd
        print(
            f"{d:>6} {f_traffic.ring_p2p_elements:>10} {b_traffic.ring_p2p_elements:>10} "
            f"{format_fraction(b_traffic.allreduce_elements):>14} {format_fraction(total):>10} "
            f"{'yes' if ok else 'NO'}"
        )


if __name__ == "__main__":
    main()
