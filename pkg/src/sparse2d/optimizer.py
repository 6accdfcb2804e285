"""Row-wise sparse AdaGrad with a moment scaling factor, plus plain SGD.

One float32 second moment per row. The step reads

    v' = v + ||g||^2
    w' = w - eta / (sqrt(v' / c) + eps) * g

and ``c = 1`` is ordinary row-wise AdaGrad. Arithmetic runs in float64 and is
rounded to float32 on store.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

VARIANTS = ("rowwise-adagrad", "sgd")


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float = 0.05
    eps: float = 1e-8
    c: float = 1.0
    variant: str = "rowwise-adagrad"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"optimizer.eta must be > 0, got {self.eta}")
        if not self.eps > 0:
            raise ValueError(f"optimizer.eps must be > 0, got {self.eps}")
        if not self.c > 0:
            raise ValueError(f"optimizer.c must be > 0, got {self.c}")
        if self.variant not in VARIANTS:
            raise ValueError(f"optimizer.variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True, eq=False)
class RowGradient:
    row: int
    vector: np.ndarray
    sample_count: int


def aggregate_group_gradient(per_rank_row_grads: Sequence[Mapping[int, np.ndarray]], group_batch_size: int,
                             per_rank_counts: Sequence[Mapping[int, int]] | None = None) -> dict[int, RowGradient]:
    """Group gradient per row: (sum over every rank's contribution) / group batch size.

    Each mapping holds one rank's per-row gradient sums over its own samples.
    Ranks are summed in the given order, in float64. Rows no rank touched get no entry.
    """
    if group_batch_size <= 0:
        raise ValueError("group batch size must be positive")
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for n, grads in enumerate(per_rank_row_grads):
        for row, vec in grads.items():
            vec = np.asarray(vec, dtype=np.float64)
            sums[row] = sums[row] + vec if row in sums else vec.copy()
            c = per_rank_counts[n].get(row, 1) if per_rank_counts else 1
            counts[row] = counts.get(row, 0) + c
    return {row: RowGradient(row, sums[row] / group_batch_size, counts[row]) for row in sorted(sums)}


def scatter_row_grads(ids: np.ndarray, sample_grads: np.ndarray, group_batch_size: int,
                      lo: int = 0, hi: int | None = None):
    """Vectorized group aggregation for the rows [lo, hi) of one table.

    ``ids`` is (batch, k); ``sample_grads`` is (batch, D), the gradient of the loss
    sum w.r.t. each pooled vector. Returns ascending unique global rows, their
    mean gradients (float64) and occurrence counts. Accumulation follows sample order.
    """
    if group_batch_size <= 0:
        raise ValueError("group batch size must be positive")
    flat = ids.reshape(-1)
    src = np.repeat(np.arange(ids.shape[0]), ids.shape[1])
    if lo > 0 or hi is not None:
        keep = (flat >= lo) & (flat < (hi if hi is not None else np.iinfo(np.int64).max))
        flat, src = flat[keep], src[keep]
    if flat.size == 0:
        return flat.astype(np.int64), np.zeros((0, sample_grads.shape[1])), np.zeros(0, np.int64)
    rows, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    acc = np.zeros((rows.size, sample_grads.shape[1]), dtype=np.float64)
    np.add.at(acc, inverse, sample_grads[src])
    return rows, acc / group_batch_size, counts


def _sq_norms(grads: np.ndarray) -> np.ndarray:
    # fixed left-to-right column order so every code path rounds identically
    sq = grads[:, 0] * grads[:, 0]
    for j in range(1, grads.shape[1]):
        sq = sq + grads[:, j] * grads[:, j]
    return sq


def effective_lr(v, cfg: OptimizerConfig):
    """eta / (sqrt(v / c) + eps). At v = 0 this is eta / eps (an untouched row)."""
    return cfg.eta / (np.sqrt(np.asarray(v, dtype=np.float64) / cfg.c) + cfg.eps)


def adagrad_rows_step(weights: np.ndarray, moments: np.ndarray, rows: np.ndarray, grads: np.ndarray,
                      cfg: OptimizerConfig) -> None:
    """In-place moment-scaled row-wise AdaGrad on the listed rows only."""
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient passed to row-wise AdaGrad")
    if rows.size == 0:
        return
    v_new = (moments[rows].astype(np.float64) + _sq_norms(grads)).astype(np.float32)
    lr = effective_lr(v_new, cfg)
    weights[rows] = (weights[rows].astype(np.float64) - lr[:, None] * grads).astype(np.float32)
    moments[rows] = v_new


def sgd_rows_step(weights: np.ndarray, rows: np.ndarray, grads: np.ndarray, cfg: OptimizerConfig) -> None:
    if rows.size == 0:
        return
    weights[rows] = (weights[rows].astype(np.float64) - cfg.eta * grads).astype(np.float32)


def apply_rows(weights, moments, rows, grads, cfg: OptimizerConfig) -> None:
    if cfg.variant == "sgd":
        sgd_rows_step(weights, rows, grads, cfg)
    else:
        adagrad_rows_step(weights, moments, rows, grads, cfg)


def adagrad_row_step(w, v: float, g, cfg: OptimizerConfig):
    """Single-row form; returns (w', v') without touching the inputs."""
    if v < 0:
        raise ValueError(f"second moment must be >= 0, got {v}")
    g = np.asarray(getattr(g, "vector", g), dtype=np.float64)
    W = np.asarray(w, dtype=np.float32).reshape(1, -1).copy()
    V = np.array([v], dtype=np.float32)
    adagrad_rows_step(W, V, np.array([0]), g.reshape(1, -1), cfg)
    return W[0], float(V[0])


def sgd_row_step(w, g, cfg: OptimizerConfig):
    g = np.asarray(getattr(g, "vector", g), dtype=np.float64)
    W = np.asarray(w, dtype=np.float32).reshape(1, -1).copy()
    sgd_rows_step(W, np.array([0]), g.reshape(1, -1), cfg)
    return W[0]
