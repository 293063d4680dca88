"""Deterministic simulated device ring.

Worker programs are plain blocking functions `program(comm) -> result` where
`comm` exposes point-to-point ring passes and an all-reduce. Two executors
share one runtime:

* ``sequential`` (default): a single run baton travels round-robin through the
  devices; each device runs until it blocks on communication or finishes.
* ``concurrent``: worker threads interleave freely.

Message flow is point-to-point FIFO with no shared mutable state, so any
deterministic program computes bit-identical results under both executors;
only the interleaving differs. Every transfer is charged to a per-device
ledger in elements: a ring hop costs the full buffer on the sending device,
an all-reduce of E elements costs 2*E*(N-1)/N per device (the bandwidth of a
ring-style reduce-scatter plus all-gather, kept as an exact fraction).
"""

from __future__ import annotations

import json
import os
import threading
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, DeadlockError, ProtocolError, ShapeError
from .tensor_ops import as_tensor

__all__ = [
    "EXECUTOR_ENV_VAR",
    "EXECUTORS",
    "RingTopology",
    "ShardedSequence",
    "scatter_sequence",
    "gather_sequence",
    "DeviceTraffic",
    "CommLedger",
    "DeviceComm",
    "RingRun",
    "run_ring",
]

EXECUTOR_ENV_VAR = "RINGSEQ_EXECUTOR"
EXECUTORS = ("sequential", "concurrent")


@dataclass(frozen=True)
class RingTopology:
    """Devices 0..n-1 arranged in a ring; data moves from each device to `next`."""

    n_devices: int

    def next_device(self, i: int) -> int:
        return (i + 1) % self.n_devices

    def prev_device(self, i: int) -> int:
        return (i - 1) % self.n_devices


@dataclass(frozen=True)
class ShardedSequence:
    """One device's contiguous slice of a sequence-partitioned tensor."""

    device_index: int
    chunk: np.ndarray


def scatter_sequence(x, n_devices: int, axis: int = -2) -> list[ShardedSequence]:
    """Split `x` into n contiguous equal chunks along the sequence axis.

    The sequence axis defaults to -2, which covers both (B, L, H) token
    layouts and per-head (B, Z, L, A) layouts.
    """
    x = as_tensor(x)
    if n_devices < 1:
        raise ConfigError(f"device count must be positive, got {n_devices}")
    length = x.shape[axis]
    if length % n_devices != 0:
        raise ConfigError(
            f"sequence length {length} not divisible by device count {n_devices}"
        )
    pieces = np.split(x, n_devices, axis=axis)
    return [ShardedSequence(i, np.ascontiguousarray(piece)) for i, piece in enumerate(pieces)]


def gather_sequence(shards, axis: int = -2) -> np.ndarray:
    """Concatenate shards back in device order; exact inverse of scatter_sequence."""
    items = list(shards)
    if not items:
        raise ShapeError("gather_sequence needs at least one shard")
    if isinstance(items[0], ShardedSequence):
        indices = sorted(s.device_index for s in items)
        if indices != list(range(len(items))):
            raise ShapeError(f"shard indices {indices} do not form a complete range")
        items = [s.chunk for s in sorted(items, key=lambda s: s.device_index)]
    return np.concatenate(items, axis=axis)


def _fraction_json(value: Fraction):
    if value.denominator == 1:
        return int(value)
    return f"{value.numerator}/{value.denominator}"


@dataclass
class DeviceTraffic:
    """Elements sent by one device, split by mechanism."""

    ring_p2p_elements: int = 0
    allreduce_elements: Fraction = field(default_factory=Fraction)

    def total_elements(self) -> Fraction:
        return self.ring_p2p_elements + self.allreduce_elements

    def total_bytes(self) -> Fraction:
        return 8 * self.total_elements()


class CommLedger:
    """Per-device transfer accounting for one protocol run."""

    def __init__(self, n_devices: int):
        self.devices = [DeviceTraffic() for _ in range(n_devices)]

    def record_ring_send(self, device: int, elements: int) -> None:
        self.devices[device].ring_p2p_elements += elements

    def record_allreduce(self, device: int, elements: int) -> None:
        n = len(self.devices)
        self.devices[device].allreduce_elements += Fraction(2 * elements * (n - 1), n)

    def total_elements(self) -> Fraction:
        return sum((d.total_elements() for d in self.devices), Fraction(0))

    def as_json_obj(self) -> list[dict]:
        return [
            {
                "device_id": i,
                "ring_p2p_elements": d.ring_p2p_elements,
                "allreduce_elements": _fraction_json(d.allreduce_elements),
                "total_bytes": _fraction_json(d.total_bytes()),
            }
            for i, d in enumerate(self.devices)
        ]

    def dumps(self) -> str:
        return json.dumps(self.as_json_obj(), indent=2, sort_keys=True)

    def __eq__(self, other) -> bool:
        return isinstance(other, CommLedger) and self.devices == other.devices


class _Abort(Exception):
    """Internal: unwind a worker after another worker failed."""


class _Runtime:
    """Shared state for one run_ring invocation. One lock guards everything."""

    def __init__(self, n: int, sequential: bool):
        self.n = n
        self.sequential = sequential
        self.cv = threading.Condition()
        self.mail: dict[tuple[int, int], deque] = {}
        self.wait_pred: list = [None] * n
        self.wait_reason: list = [None] * n
        self.done = [False] * n
        self.active = 0
        self.failure: BaseException | None = None
        self.results: list = [None] * n
        self.ledger = CommLedger(n)
        self.ar_gen = [0] * n
        self.ar_slots: dict[int, dict[int, np.ndarray]] = {}
        self.ar_ready: dict[int, list] = {}

    # -- scheduling (always called with self.cv held) --------------------

    def _runnable(self, d: int) -> bool:
        return not self.done[d] and (self.wait_pred[d] is None or self.wait_pred[d]())

    def _fail_deadlock(self) -> None:
        lines = []
        for d in range(self.n):
            if self.done[d]:
                lines.append(f"device {d}: finished")
            elif self.wait_reason[d] is not None:
                lines.append(f"device {d}: waiting on {self.wait_reason[d]}")
            else:
                lines.append(f"device {d}: runnable")
        if self.failure is None:
            self.failure = DeadlockError(
                "no device can make progress:\n  " + "\n  ".join(lines)
            )
        self.cv.notify_all()

    def _advance(self, from_dev: int) -> None:
        # Sequential mode: hand the baton to the next runnable device in ring
        # order. If every unfinished device is stuck, that is a deadlock.
        for step in range(1, self.n + 1):
            d = (from_dev + step) % self.n
            if self._runnable(d):
                self.active = d
                self.cv.notify_all()
                return
        if all(self.done):
            self.cv.notify_all()
            return
        self._fail_deadlock()

    def _check_concurrent_deadlock(self) -> None:
        if all(self.done):
            return
        for d in range(self.n):
            if self._runnable(d):
                return
        self._fail_deadlock()

    def _block(self, dev: int, pred: Callable[[], bool], reason: str) -> None:
        """Park device `dev` until pred() holds (and, sequentially, its turn)."""
        if self.failure is not None:
            raise _Abort()
        if pred():
            return  # nothing to wait for; sequentially, keep the baton
        self.wait_pred[dev] = pred
        self.wait_reason[dev] = reason
        if self.sequential:
            self._advance(dev)
        else:
            self._check_concurrent_deadlock()
        while True:
            if self.failure is not None:
                self.wait_pred[dev] = None
                self.wait_reason[dev] = None
                raise _Abort()
            if pred() and (not self.sequential or self.active == dev):
                break
            self.cv.wait()
        self.wait_pred[dev] = None
        self.wait_reason[dev] = None

    def _gate_start(self, dev: int) -> None:
        with self.cv:
            while self.active != dev:
                if self.failure is not None:
                    raise _Abort()
                self.cv.wait()
            if self.failure is not None:
                raise _Abort()

    # -- worker entry -----------------------------------------------------

    def runner(self, dev: int, program: Callable) -> None:
        try:
            if self.sequential:
                self._gate_start(dev)
            result = program(DeviceComm(self, dev))
            with self.cv:
                self.results[dev] = result
        except _Abort:
            pass
        except BaseException as exc:  # propagate the first worker failure
            with self.cv:
                if self.failure is None:
                    self.failure = exc
                self.cv.notify_all()
        finally:
            with self.cv:
                self.done[dev] = True
                self.wait_pred[dev] = None
                self.wait_reason[dev] = None
                if self.sequential:
                    if self.active == dev or self.failure is not None:
                        self._advance(dev)
                else:
                    self._check_concurrent_deadlock()
                self.cv.notify_all()


class DeviceComm:
    """Per-device handle workers use for all inter-device data flow."""

    def __init__(self, runtime: _Runtime, device: int):
        self._rt = runtime
        self.device = device
        self.n_devices = runtime.n
        self.topology = RingTopology(runtime.n)

    def ring_pass(self, local) -> np.ndarray:
        """Send `local` to the next device, return the previous device's tensor.

        With one device this is a no-op and nothing is charged.
        """
        rt = self._rt
        arr = as_tensor(local)
        if rt.n == 1:
            return arr
        dst = self.topology.next_device(self.device)
        src = self.topology.prev_device(self.device)
        with rt.cv:
            if rt.failure is not None:
                raise _Abort()
            rt.mail.setdefault((self.device, dst), deque()).append(arr)
            rt.ledger.record_ring_send(self.device, arr.size)
            rt.cv.notify_all()
            box = rt.mail.setdefault((src, self.device), deque())
            rt._block(self.device, lambda: len(box) > 0, f"ring message from device {src}")
            received = box.popleft()
        if received.shape != arr.shape:
            raise ProtocolError(
                f"ring_pass shape mismatch on device {self.device}: "
                f"sent {arr.shape}, received {received.shape}"
            )
        return received

    def all_reduce(self, local) -> np.ndarray:
        """Elementwise sum over all devices, identical on every device.

        The reduction order is fixed ascending by device index, so the result
        is bitwise the same no matter which device finishes depositing last.
        With one device this is the identity and nothing is charged.
        """
        rt = self._rt
        arr = as_tensor(local)
        if rt.n == 1:
            return arr
        with rt.cv:
            if rt.failure is not None:
                raise _Abort()
            gen = rt.ar_gen[self.device]
            rt.ar_gen[self.device] += 1
            slot = rt.ar_slots.setdefault(gen, {})
            for other in slot.values():
                if other.shape != arr.shape:
                    raise ProtocolError(
                        f"all_reduce shape mismatch in round {gen}: "
                        f"device {self.device} holds {arr.shape}, another device holds {other.shape}"
                    )
                break
            slot[self.device] = arr
            rt.ledger.record_allreduce(self.device, arr.size)
            if len(slot) == rt.n:
                total = slot[0].copy()
                for d in range(1, rt.n):
                    np.add(total, slot[d], out=total)
                rt.ar_ready[gen] = [total, rt.n]
                del rt.ar_slots[gen]
                rt.cv.notify_all()
            rt._block(self.device, lambda: gen in rt.ar_ready, f"all_reduce round {gen}")
            entry = rt.ar_ready[gen]
            entry[1] -= 1
            result = entry[0].copy()
            if entry[1] == 0:
                del rt.ar_ready[gen]
        return result


@dataclass
class RingRun:
    """Per-device program results plus the transfer ledger for the run."""

    results: list
    ledger: CommLedger


def resolve_executor(executor: str | None = None) -> str:
    """Explicit argument wins, then the RINGSEQ_EXECUTOR env var, then sequential."""
    mode = executor or os.environ.get(EXECUTOR_ENV_VAR) or "sequential"
    if mode not in EXECUTORS:
        raise ConfigError(f"unknown executor {mode!r}, expected one of {EXECUTORS}")
    return mode


def run_ring(n_devices: int, program: Callable[[DeviceComm], Any], *, executor: str | None = None) -> RingRun:
    """Run `program` on every device of a simulated ring.

    Returns per-device results in device order plus the communication ledger.
    Raises the first worker exception, or DeadlockError when no device can
    make progress.
    """
    if n_devices < 1:
        raise ConfigError(f"device count must be positive, got {n_devices}")
    mode = resolve_executor(executor)
    rt = _Runtime(n_devices, sequential=(mode == "sequential"))
    if n_devices == 1:
        # Single device: no communication is possible; run inline.
        try:
            rt.results[0] = program(DeviceComm(rt, 0))
        except _Abort:  # pragma: no cover - unreachable with n == 1
            pass
        return RingRun(rt.results, rt.ledger)
    threads = [
        threading.Thread(target=rt.runner, args=(d, program), daemon=True)
        for d in range(n_devices)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=600.0)
    if any(t.is_alive() for t in threads):  # pragma: no cover - watchdog only
        with rt.cv:
            rt._fail_deadlock()
        for t in threads:
            t.join(timeout=5.0)
    if rt.failure is not None:
        raise rt.failure
    return RingRun(rt.results, rt.ledger)
