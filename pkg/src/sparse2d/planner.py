"""Shard placement within one parallelism group, and load-imbalance metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from sparse2d.data import FeatureSpec, zipf_pmf

SEVERE_STRAGGLER_THRESHOLD = 2.0


@dataclass(frozen=True)
class TableLoadProfile:
    table_id: int
    size_bytes: float
    expected_lookups_per_batch: float
    num_rows: int = 0

    def __post_init__(self):
        if self.size_bytes < 0 or self.expected_lookups_per_batch < 0:
            raise ValueError(f"table {self.table_id}: negative load profile")


@dataclass(frozen=True)
class ShardEntry:
    table_id: int
    row_lo: int
    row_hi: int
    local_rank: int


@dataclass(frozen=True)
class ShardingPlan:
    entries: tuple[ShardEntry, ...]
    N: int

    def shards_of(self, table_id: int) -> list[ShardEntry]:
        return sorted((e for e in self.entries if e.table_id == table_id), key=lambda e: e.row_lo)

    def owned_by(self, local_rank: int) -> list[ShardEntry]:
        return [e for e in self.entries if e.local_rank == local_rank]

    @property
    def table_ids(self) -> list[int]:
        return sorted({e.table_id for e in self.entries})

    def validate(self, rows_per_table: dict[int, int]) -> None:
        for tid, rows in rows_per_table.items():
            cursor = 0
            for e in self.shards_of(tid):
                if e.row_lo != cursor or e.row_hi <= e.row_lo:
                    raise ValueError(f"table {tid}: shards do not tile [0, {rows})")
                if not 0 <= e.local_rank < self.N:
                    raise ValueError(f"table {tid}: local rank {e.local_rank} outside [0, {self.N})")
                cursor = e.row_hi
            if cursor != rows:
                raise ValueError(f"table {tid}: shards cover [0, {cursor}) instead of [0, {rows})")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table_id", "row_lo", "row_hi", "local_rank"])
        for e in sorted(self.entries, key=lambda e: (e.table_id, e.row_lo)):
            w.writerow([e.table_id, e.row_lo, e.row_hi, e.local_rank])
        return buf.getvalue()


def profiles_from_specs(specs: Sequence[FeatureSpec], batch_size: int, dim: int) -> list[TableLoadProfile]:
    """Expected lookups = IDs per sample x batch size; bytes = weights plus one moment per row."""
    return [TableLoadProfile(s.table_id, float(s.num_ids * (dim + 1) * 4),
                             float(s.ids_per_sample * batch_size), s.num_ids)
            for s in specs]


def plan_greedy(profiles: Sequence[TableLoadProfile], N: int, strategy: str = "table-wise") -> ShardingPlan:
    """Table-wise: LPT bin packing on lookup load. Row-wise: N equal contiguous ranges per table."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not profiles:
        raise ValueError("no tables to plan")
    entries = []
    if strategy == "table-wise":
        loads = [0.0] * N
        for p in sorted(profiles, key=lambda p: (-p.expected_lookups_per_batch, p.table_id)):
            target = min(range(N), key=lambda r: (loads[r], r))
            loads[target] += p.expected_lookups_per_batch
            entries.append(ShardEntry(p.table_id, 0, p.num_rows, target))
    elif strategy == "row-wise":
        for p in sorted(profiles, key=lambda p: p.table_id):
            for j in range(N):
                lo, hi = j * p.num_rows // N, (j + 1) * p.num_rows // N
                if hi > lo:
                    entries.append(ShardEntry(p.table_id, lo, hi, j))
    else:
        raise ValueError(f"unknown sharding strategy {strategy!r}")
    return ShardingPlan(tuple(entries), N)


def per_rank_loads(plan: ShardingPlan, profiles: Sequence[TableLoadProfile]) -> list[float]:
    """Lookup load per local rank; row shards take their share of the load pro rata by rows."""
    by_id = {p.table_id: p for p in profiles}
    loads = [0.0] * plan.N
    for e in plan.entries:
        p = by_id[e.table_id]
        frac = (e.row_hi - e.row_lo) / p.num_rows if p.num_rows else 1.0
        loads[e.local_rank] += p.expected_lookups_per_batch * frac
    return loads


def expected_rank_lookups(plan: ShardingPlan, specs: Sequence[FeatureSpec], batch_size: int) -> list[float]:
    """Expected lookups per local rank under each feature's Zipf distribution."""
    loads = [0.0] * plan.N
    by_id = {s.table_id: s for s in specs}
    for e in plan.entries:
        s = by_id[e.table_id]
        mass = zipf_pmf(s.num_ids, s.zipf_exponent)[e.row_lo:e.row_hi].sum()
        loads[e.local_rank] += float(mass) * s.ids_per_sample * batch_size
    return loads


def imbalance_ratio(per_rank_values: Iterable[float]) -> float:
    """max / mean."""
    vals = np.asarray(list(per_rank_values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("imbalance ratio of an empty list")
    if np.any(vals < 0):
        raise ValueError("imbalance ratio needs nonnegative values")
    mean = vals.mean()
    if mean <= 0:
        raise ValueError("imbalance ratio is undefined when every value is zero")
    return float(vals.max() / mean)


def classify_imbalance(ratio: float) -> str:
    return "severe straggler" if ratio > SEVERE_STRAGGLER_THRESHOLD else "balanced"


def read_profiles_csv(text: str) -> list[TableLoadProfile]:
    """Columns: table_id,size_bytes,lookups[,num_rows]."""
    rows = csv.DictReader(io.StringIO(text))
    out = []
    for r in rows:
        out.append(TableLoadProfile(int(r["table_id"]), float(r["size_bytes"]), float(r["lookups"]),
                                    int(r.get("num_rows") or 0)))
    return out
