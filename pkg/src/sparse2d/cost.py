"""Deployment cost of table replication and the QPS scaling factor.

All costs are per rank. Sizes are in GB, bandwidths in GB/s.
"""

from __future__ import annotations

from dataclasses import dataclass

from sparse2d.collectives import BandwidthModel

INTRA_HOST_SPEEDUP = 7.0


@dataclass(frozen=True)
class ClusterSpec:
    T: int
    M: int
    S: float
    B_sync: float

    def __post_init__(self):
        if self.T < 1 or self.M < 1 or self.T % self.M:
            raise ValueError(f"M={self.M} must divide T={self.T}")
        if not self.S > 0 or not self.B_sync > 0:
            raise ValueError("table size and sync bandwidth must be positive")


@dataclass(frozen=True)
class CostEstimate:
    mem_overhead_gb: float
    sync_latency_s: float


def _check(S, M, T):
    if T < 1 or M < 1 or T % M:
        raise ValueError(f"M={M} must divide T={T}")
    if S < 0:
        raise ValueError("table size must be nonnegative")


def memory_overhead(S: float, M: int, T: int) -> float:
    """Extra table memory per rank from keeping M replicas: S (M - 1) / T."""
    _check(S, M, T)
    return S * (M - 1) / T


def sync_latency(S: float, M: int, T: int, B_sync: float) -> float:
    """Ring all-reduce time per rank for the replica sync: 2 * overhead / B_sync."""
    if not B_sync > 0:
        raise ValueError("sync bandwidth must be positive")
    return 2 * memory_overhead(S, M, T) / B_sync


def sync_latency_with_alpha(S: float, M: int, T: int, B_sync: float, alpha: float) -> float:
    return sync_latency(S, M, T, B_sync) + 2 * alpha * (M - 1)


def estimate(spec: ClusterSpec) -> CostEstimate:
    return CostEstimate(memory_overhead(spec.S, spec.M, spec.T),
                        sync_latency(spec.S, spec.M, spec.T, spec.B_sync))


def default_sync_bandwidth(M: int, inter_gbps: float, ranks_per_host: int = 8) -> float:
    """Host-aligned replicas (M dividing the host size) sync at intra-host speed."""
    if M <= ranks_per_host and ranks_per_host % M == 0:
        return INTRA_HOST_SPEEDUP * inter_gbps
    return inter_gbps


def default_sync_bandwidth_from(model: BandwidthModel, M: int) -> float:
    """Same rule, taking bandwidths (bytes/s) from a BandwidthModel; returns GB/s."""
    if M <= model.ranks_per_host and model.ranks_per_host % M == 0:
        return model.bw_intra / 1e9
    return model.bw_inter / 1e9


def qps_scaling_factor(qps_base: float, gpus_base: int, qps_new: float, gpus_new: int) -> float:
    """(qps_new / qps_base) / (gpus_new / gpus_base); 1.0 is linear scaling."""
    if min(qps_base, gpus_base, qps_new, gpus_new) <= 0:
        raise ValueError("QPS and GPU counts must be positive")
    if gpus_new <= gpus_base:
        raise ValueError("gpus_new must exceed gpus_base")
    return (qps_new / qps_base) / (gpus_new / gpus_base)
