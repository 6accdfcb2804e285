"""Virtual cluster topology and in-process collectives with alpha-beta cost accounting.

Latencies are analytic model outputs, not wall-clock measurements.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KERNELS = ("lookup_a2a", "grad_a2a", "table_allreduce", "compute")


@dataclass(frozen=True)
class Topology:
    """T ranks in M groups of N = T / M; rank r is local rank r % N of group r // N."""

    T: int
    M: int = 1

    def __post_init__(self):
        if self.T < 1 or self.M < 1:
            raise ValueError(f"topology needs T >= 1 and M >= 1, got T={self.T}, M={self.M}")
        if self.T % self.M:
            raise ValueError(f"group count M={self.M} does not divide T={self.T}")

    @property
    def N(self) -> int:
        return self.T // self.M

    def group_of(self, rank: int) -> int:
        return rank // self.N

    def local_rank_of(self, rank: int) -> int:
        return rank % self.N

    def rank_of(self, group: int, local_rank: int) -> int:
        return group * self.N + local_rank

    def group_ranks(self, group: int) -> list[int]:
        return [self.rank_of(group, n) for n in range(self.N)]

    def peer_ranks(self, local_rank: int) -> list[int]:
        """Ranks holding the same shard in every group."""
        return [self.rank_of(m, local_rank) for m in range(self.M)]


@dataclass(frozen=True)
class BandwidthModel:
    """alpha in seconds per hop, bandwidths in bytes/s.

    With ``host_aligned_sync`` the replicas of a shard sit on one host whenever
    M divides ``ranks_per_host``, so cross-group sync runs at intra-host speed.
    """

    alpha: float = 10e-6
    bw_inter: float = 12.5e9
    bw_intra: float = 7 * 12.5e9
    ranks_per_host: int = 8
    host_aligned_sync: bool = True

    def __post_init__(self):
        if min(self.alpha, self.bw_inter, self.bw_intra) <= 0 or self.ranks_per_host < 1:
            raise ValueError("bandwidth model parameters must be positive")
        if self.bw_intra < self.bw_inter:
            raise ValueError("intra-host bandwidth must be >= inter-host bandwidth")

    def sync_bandwidth(self, topology: Topology) -> float:
        M = topology.M
        if self.host_aligned_sync and M <= self.ranks_per_host and self.ranks_per_host % M == 0:
            return self.bw_intra
        hosts = {r // self.ranks_per_host for r in topology.peer_ranks(0)}
        return self.bw_intra if len(hosts) == 1 else self.bw_inter

    def a2a_bandwidth(self, topology: Topology) -> float:
        if self.host_aligned_sync and topology.M > 1:
            # replicas share hosts, so one group spans T / ranks_per_host hosts
            spans = -(-topology.T // self.ranks_per_host)
        else:
            spans = -(-topology.N // self.ranks_per_host)
        return self.bw_intra if spans <= 1 else self.bw_inter


@dataclass(frozen=True)
class CollectiveTrace:
    """``bytes_*`` count whole buffers, self-addressed parts included; ``wire_*`` exclude them."""

    kind: str
    kernel: str
    participants: tuple[int, ...]
    bytes_sent: tuple[int, ...]
    bytes_recv: tuple[int, ...]
    wire_sent: tuple[int, ...]
    wire_recv: tuple[int, ...]
    latency_s: float


def _nbytes(blob) -> int:
    if isinstance(blob, np.ndarray):
        return int(blob.nbytes)
    return len(blob)


def route_all_to_all(topology: Topology, group: int, payloads, model: BandwidthModel | None = None,
                     kernel: str = "lookup_a2a"):
    """Deliver ``payloads[src][dst]`` inside one group.

    ``payloads`` is an N x N nested sequence of byte blobs or arrays. Each
    destination receives its blobs in ascending source order. Returns
    ``(delivered, trace)`` where ``delivered[dst][src]`` is the blob.
    """
    model = model or BandwidthModel()
    N = topology.N
    if not 0 <= group < topology.M:
        raise ValueError(f"group {group} outside [0, {topology.M})")
    if len(payloads) != N or any(len(row) != N for row in payloads):
        shape = (len(payloads), *(len(r) for r in payloads[:1]))
        raise ValueError(f"all-to-all payload matrix must be {N}x{N}, got {shape}")
    sizes = np.array([[_nbytes(b) for b in row] for row in payloads], dtype=np.int64)
    wire = sizes.copy()
    np.fill_diagonal(wire, 0)
    delivered = [[payloads[src][dst] for src in range(N)] for dst in range(N)]
    sent, recv = sizes.sum(axis=1), sizes.sum(axis=0)
    wsent, wrecv = wire.sum(axis=1), wire.sum(axis=0)
    busiest = int(max(wsent.max(), wrecv.max())) if N else 0
    latency = model.alpha * (N - 1) + busiest / model.a2a_bandwidth(topology)
    trace = CollectiveTrace("all-to-all", kernel, tuple(topology.group_ranks(group)),
                            tuple(int(x) for x in sent), tuple(int(x) for x in recv),
                            tuple(int(x) for x in wsent), tuple(int(x) for x in wrecv), latency)
    return delivered, trace


def allreduce_latency(nbytes: int, M: int, bandwidth: float, alpha: float) -> float:
    """Ring all-reduce: 2 * bytes * (M - 1) / (M * bw) + 2 * alpha * (M - 1)."""
    if M <= 1:
        return 0.0
    return 2.0 * nbytes * (M - 1) / (M * bandwidth) + 2.0 * alpha * (M - 1)


def mean_replicas(replicas: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean summed in ascending replica order with float64 accumulation."""
    acc = replicas[0].astype(np.float64)
    for r in replicas[1:]:
        acc += r
    if len(replicas) > 1:
        acc /= len(replicas)
    return acc.astype(replicas[0].dtype)


def all_reduce_mean_across_groups(topology: Topology, local_rank: int, replicas: Sequence[np.ndarray],
                                  model: BandwidthModel | None = None, kernel: str = "table_allreduce",
                                  rows: np.ndarray | None = None):
    """Average one shard's replicas over the M groups; returns (mean, trace).

    With ``rows`` only those leading-axis entries are reduced and returned; the
    caller asserts the rest already agree across replicas. The trace always
    accounts for the full buffer. The caller writes the mean back into every replica.
    """
    model = model or BandwidthModel()
    if len(replicas) != topology.M:
        raise ValueError(f"expected {topology.M} replicas, got {len(replicas)}")
    shapes = {np.shape(r) for r in replicas}
    if len(shapes) != 1:
        raise ValueError(f"replica length mismatch: {sorted(shapes)}")
    out = mean_replicas(replicas if rows is None else [r[rows] for r in replicas])
    nbytes = int(np.asarray(replicas[0]).nbytes)
    M = topology.M
    # ring all-reduce moves 2 (M - 1) / M of the buffer per rank
    per_rank = 2 * nbytes * (M - 1) // M if M > 1 else 0
    latency = allreduce_latency(nbytes, M, model.sync_bandwidth(topology), model.alpha)
    vol = (per_rank,) * M
    trace = CollectiveTrace("all-reduce", kernel, tuple(topology.peer_ranks(local_rank)),
                            vol, vol, vol, vol, latency)
    return out, trace


def merge_traces(traces: Sequence[CollectiveTrace], kernel: str, participants: Sequence[int]) -> dict[int, float]:
    lat = {r: 0.0 for r in participants}
    for t in traces:
        if t.kernel == kernel:
            for r in t.participants:
                lat[r] = lat.get(r, 0.0) + t.latency_s
    return lat


def simulate_step_latency(traces: Sequence[CollectiveTrace], per_rank_compute_costs: Sequence[float]) -> dict[str, float]:
    """Serial kernel model: each kernel costs its slowest rank; the step costs the sum."""
    ranks = list(range(len(per_rank_compute_costs)))
    out = {}
    for kernel in KERNELS[:3]:
        per_rank = merge_traces(traces, kernel, ranks)
        out[kernel] = max(per_rank.values(), default=0.0)
    out["compute"] = float(max(per_rank_compute_costs, default=0.0))
    out["total"] = sum(out[k] for k in KERNELS)
    return out


@dataclass
class TraceLog:
    """Serialization point for traces emitted by concurrently executed ranks."""

    rows: list[tuple[int, CollectiveTrace]] = field(default_factory=list)

    def extend(self, step: int, traces: Sequence[CollectiveTrace]) -> None:
        self.rows.extend((step, t) for t in traces)

    def for_step(self, step: int) -> list[CollectiveTrace]:
        return [t for s, t in self.rows if s == step]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "kernel", "rank", "bytes", "latency_s"])
        for step, t in self.rows:
            for r, b in zip(t.participants, t.bytes_sent):
                w.writerow([step, t.kernel, r, b, f"{t.latency_s:.9g}"])
        return buf.getvalue()
