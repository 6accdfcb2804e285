"""Embedding tables, row-range shards, sum-pooled lookup and sparse row updates.

Storage is float32; pooling accumulates in float64.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from sparse2d import _rng

_LANE_INIT = 7
CHECKPOINT_MAGIC = b"EMBT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, table_id, rows, dim


@dataclass(eq=False)
class EmbeddingTable:
    table_id: int
    weights: np.ndarray  # (R, D) float32
    moments: np.ndarray  # (R,) float32

    @property
    def num_rows(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def full_shard(self) -> "TableShard":
        return TableShard(self.table_id, 0, self.num_rows, self.weights, self.moments)

    def shard(self, lo: int, hi: int) -> "TableShard":
        return TableShard(self.table_id, lo, hi, self.weights[lo:hi], self.moments[lo:hi])


@dataclass(eq=False)
class TableShard:
    """Rows [lo, hi) of one table. ``weights`` and ``moments`` are views into the owner table."""

    table_id: int
    lo: int
    hi: int
    weights: np.ndarray
    moments: np.ndarray

    def __contains__(self, row) -> bool:
        return self.lo <= row < self.hi


def init_table(table_id: int, num_rows: int, dim: int, seed: int) -> EmbeddingTable:
    """Uniform(-1/sqrt(D), 1/sqrt(D)) weights keyed by (seed, table_id, row, col); zero moments."""
    if num_rows < 1 or dim < 1:
        raise ValueError(f"table {table_id}: rows and dim must be >= 1")
    bound = 1.0 / np.sqrt(dim)
    u = _rng.uniform(seed, _LANE_INIT, table_id, 0, np.arange(num_rows)[:, None], np.arange(dim)[None, :])
    w = ((2.0 * u - 1.0) * bound).astype(np.float32)
    return EmbeddingTable(table_id, w, np.zeros(num_rows, dtype=np.float32))


def pool_partial(weights: np.ndarray, lo: int, hi: int, ids: np.ndarray) -> np.ndarray:
    """Per-sample float64 sums of rows whose global id lies in [lo, hi).

    ``weights`` holds rows lo..hi-1; ``ids`` is (batch, k). IDs outside the range
    contribute nothing.
    """
    mask = (ids >= lo) & (ids < hi)
    local = np.where(mask, ids - lo, 0)
    rows = weights[local].astype(np.float64)
    rows[~mask] = 0.0
    return rows.sum(axis=1)


def lookup_and_pool(shards: Sequence[TableShard], id_lists) -> np.ndarray:
    """Sum-pooled embeddings, one row per sample; an empty ID list pools to zeros.

    ``id_lists`` is a (batch, k) integer array or a list of per-sample lists.
    """
    shards = sorted(shards, key=lambda s: s.lo)
    dim = shards[0].weights.shape[1]
    lists = [list(map(int, x)) for x in id_lists]
    out = np.zeros((len(lists), dim), dtype=np.float64)
    for i, ids in enumerate(lists):
        for row in ids:
            for sh in shards:
                if row in sh:
                    out[i] += sh.weights[row - sh.lo]
                    break
            else:
                ranges = [(s.lo, s.hi) for s in shards]
                raise KeyError(f"table {shards[0].table_id}: id {row} outside shard ranges {ranges}")
    return out


def apply_row_update(shard: TableShard, row: int, delta: np.ndarray, new_moment: float) -> None:
    """weights[row] += delta and moments[row] = new_moment; other rows untouched."""
    if row not in shard:
        raise KeyError(f"table {shard.table_id}: row {row} outside shard [{shard.lo}, {shard.hi})")
    if not new_moment >= 0:
        raise ValueError(f"table {shard.table_id}: negative second moment {new_moment} for row {row}")
    i = row - shard.lo
    shard.weights[i] = (shard.weights[i].astype(np.float64) + np.asarray(delta, np.float64)).astype(np.float32)
    shard.moments[i] = np.float32(new_moment)


def table_to_bytes(table: EmbeddingTable) -> bytes:
    head = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, table.table_id, table.num_rows, table.dim)
    return (head + np.ascontiguousarray(table.weights, dtype="<f4").tobytes()
            + np.ascontiguousarray(table.moments, dtype="<f4").tobytes())


def table_from_bytes(blob: bytes) -> EmbeddingTable:
    magic, version, table_id, rows, dim = _HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not an embedding checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _HEADER.size
    n_w = rows * dim * 4
    expected = off + n_w + rows * 4
    if len(blob) != expected:
        raise ValueError(f"checkpoint for table {table_id} has {len(blob)} bytes, expected {expected}")
    w = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=off).reshape(rows, dim)
    v = np.frombuffer(blob, dtype="<f4", count=rows, offset=off + n_w)
    return EmbeddingTable(table_id, w.astype(np.float32), v.astype(np.float32))


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_table(table: EmbeddingTable, path) -> None:
    atomic_write(path, table_to_bytes(table))


def load_table(path) -> EmbeddingTable:
    return table_from_bytes(Path(path).read_bytes())
