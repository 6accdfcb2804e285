"""Synthetic sparse CTR data.

IDs follow a truncated Zipf law per feature, dense features are i.i.d. standard
normal, and labels are Bernoulli draws from a fixed logistic ground-truth model.
Every value is keyed by ``(global_seed, step, rank, draw index)`` through the
counter-based generator in :mod:`sparse2d._rng`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterator, Sequence

import numpy as np

from sparse2d import _kernels, _rng

# lane ids separate independent random streams
_LANE_IDS = 1
_LANE_DENSE = 2
_LANE_LABEL = 3
_LANE_EVAL = 100
_TRUTH_SALT = 0x7EB7
# draw index packs (feature << 10) + position
_MAX_IDS = 1 << 10
_MAX_FEATURES = 1 << 10


@dataclass(frozen=True)
class FeatureSpec:
    table_id: int
    num_ids: int
    zipf_exponent: float = 1.0
    ids_per_sample: int = 1

    def __post_init__(self):
        if self.num_ids < 1:
            raise ValueError(f"feature {self.table_id}: num_ids must be >= 1, got {self.num_ids}")
        if self.ids_per_sample < 0:
            raise ValueError(f"feature {self.table_id}: ids_per_sample must be >= 0")
        if self.zipf_exponent < 0:
            raise ValueError(f"feature {self.table_id}: zipf_exponent must be >= 0")
        if self.ids_per_sample >= _MAX_IDS:
            raise ValueError(f"feature {self.table_id}: ids_per_sample must be < {_MAX_IDS}")


@lru_cache(maxsize=256)
def zipf_pmf(num_ids: int, exponent: float) -> np.ndarray:
    """P(id = k) proportional to (k + 1) ** -exponent for k in [0, num_ids)."""
    w = np.arange(1, num_ids + 1, dtype=np.float64) ** -float(exponent)
    return w / w.sum()


@lru_cache(maxsize=256)
def _zipf_cdf(num_ids: int, exponent: float) -> np.ndarray:
    cdf = np.cumsum(zipf_pmf(num_ids, exponent))
    cdf[-1] = 1.0
    return cdf


def sample_zipf(u: np.ndarray, num_ids: int, exponent: float) -> np.ndarray:
    """Map uniforms in [0, 1) to IDs by inverse-CDF binary search."""
    idx = np.searchsorted(_zipf_cdf(num_ids, exponent), u, side="right")
    return np.minimum(idx, num_ids - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """Fixed logistic labeling model: logit = bias + sum of ID terms + dense . w."""

    contributions: tuple[np.ndarray, ...]
    dense_weights: np.ndarray
    bias: float

    @classmethod
    def from_seed(cls, seed: int, specs: Sequence[FeatureSpec], dense_dim: int = 8,
                  scale: float = 1.5, bias: float = -1.0) -> "GroundTruthModel":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TRUTH_SALT]))
        n_terms = max(1, sum(s.ids_per_sample for s in specs))
        contribs = tuple(rng.normal(0.0, scale / np.sqrt(n_terms), size=s.num_ids) for s in specs)
        dense_w = rng.normal(0.0, 0.5 / np.sqrt(max(dense_dim, 1)), size=dense_dim)
        return cls(contribs, dense_w, float(bias))

    @cached_property
    def _flat(self):
        offsets = np.cumsum([0] + [c.shape[0] for c in self.contributions]).astype(np.int64)
        flat = np.concatenate(self.contributions) if self.contributions else np.zeros(0)
        return flat, offsets

    def logits(self, ids: Sequence[np.ndarray], dense: np.ndarray) -> np.ndarray:
        # per sample: bias, then ID terms in feature/position order, then dense terms
        flat, offsets = self._flat
        ids = [np.asarray(a, dtype=np.int64) for a in ids]
        ks = np.array([a.shape[1] for a in ids], dtype=np.int64)
        id_offsets = np.cumsum([0] + [a.size for a in ids]).astype(np.int64)
        ids_flat = np.concatenate([a.ravel() for a in ids]) if ids else np.zeros(0, dtype=np.int64)
        return _kernels.truth_logits(self.bias, flat, offsets, ids_flat, id_offsets, ks,
                                     np.ascontiguousarray(dense, dtype=np.float32),
                                     np.asarray(self.dense_weights, dtype=np.float64))


@lru_cache(maxsize=32)
def _truth_cached(seed, specs, dense_dim, scale, bias):
    return GroundTruthModel.from_seed(seed, specs, dense_dim, scale, bias)


def ground_truth(seed: int, specs: Sequence[FeatureSpec], dense_dim: int = 8,
                 scale: float = 1.5, bias: float = -1.0) -> GroundTruthModel:
    return _truth_cached(int(seed), tuple(specs), int(dense_dim), float(scale), float(bias))


@dataclass(frozen=True, eq=False)
class MiniBatch:
    """Per-rank batch. ``ids[f]`` has shape (batch, ids_per_sample) for feature f."""

    ids: tuple[np.ndarray, ...]
    dense: np.ndarray
    labels: np.ndarray
    rank: int
    step: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def samples(self) -> Iterator[tuple[tuple[tuple[int, ...], ...], tuple[float, ...], int]]:
        for i in range(len(self)):
            yield (tuple(tuple(int(x) for x in f[i]) for f in self.ids),
                   tuple(float(x) for x in self.dense[i]),
                   int(self.labels[i]))

    def to_bytes(self) -> bytes:
        parts = [np.ascontiguousarray(a).tobytes() for a in self.ids]
        parts += [self.dense.tobytes(), self.labels.tobytes()]
        return b"".join(parts)


def _draw(seed, lane_base, step, ranks, slots, specs, dense_dim, truth):
    """Draw samples for parallel arrays ``ranks``/``slots`` (one entry per sample)."""
    ranks = np.ascontiguousarray(ranks, dtype=np.int64)
    slots = np.ascontiguousarray(slots, dtype=np.int64)
    if len(specs) > _MAX_FEATURES:
        raise ValueError(f"at most {_MAX_FEATURES} features are supported")
    if ranks.size and (ranks.min() < 0 or ranks.max() >= 1 << _rng.RANK_BITS
                       or slots.min() < 0 or slots.max() >= 1 << _rng.SLOT_BITS):
        raise ValueError("random counter out of range")
    if 2 * dense_dim > 1 << _rng.DRAW_BITS:
        raise ValueError("dense_dim too large")
    key = _rng.stream_key(seed, lane_base + _LANE_IDS, step)
    ids = tuple(_kernels.draw_ids(key, ranks, slots, f, spec.ids_per_sample,
                                  _zipf_cdf(spec.num_ids, spec.zipf_exponent))
                for f, spec in enumerate(specs))
    dense = _kernels.draw_normals(_rng.stream_key(seed, lane_base + _LANE_DENSE, step), ranks, slots, dense_dim)
    if truth is None:
        truth = ground_truth(seed, specs, dense_dim)
    labels = _kernels.draw_labels(_rng.stream_key(seed, lane_base + _LANE_LABEL, step), ranks, slots,
                                  truth.logits(ids, dense))
    return ids, dense, labels


def gen_batch(global_seed: int, step: int, rank: int, specs: Sequence[FeatureSpec],
              batch_size: int, dense_dim: int = 8, truth: GroundTruthModel | None = None) -> MiniBatch:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    ranks = np.full(batch_size, rank, dtype=np.int64)
    ids, dense, labels = _draw(global_seed, 0, step, ranks, np.arange(batch_size), specs, dense_dim, truth)
    return MiniBatch(ids, dense, labels, rank, step)


def draw_global(global_seed: int, step: int, num_ranks: int, specs: Sequence[FeatureSpec],
                per_rank_batch: int, dense_dim: int = 8, truth: GroundTruthModel | None = None):
    """All ranks' samples for one step as stacked arrays, rank-major order."""
    ranks = np.repeat(np.arange(num_ranks, dtype=np.int64), per_rank_batch)
    slots = np.tile(np.arange(per_rank_batch, dtype=np.int64), num_ranks)
    return _draw(global_seed, 0, step, ranks, slots, specs, dense_dim, truth)


def global_batch(global_seed: int, step: int, topology, specs: Sequence[FeatureSpec],
                 per_rank_batch: int, dense_dim: int = 8,
                 truth: GroundTruthModel | None = None) -> list[MiniBatch]:
    """One disjoint MiniBatch per rank. The data depends on T only, never on M."""
    T = topology.T
    ids, dense, labels = draw_global(global_seed, step, T, specs, per_rank_batch, dense_dim, truth)
    out = []
    for r in range(T):
        sl = slice(r * per_rank_batch, (r + 1) * per_rank_batch)
        out.append(MiniBatch(tuple(a[sl] for a in ids), dense[sl], labels[sl], r, step))
    return out


def eval_set(global_seed: int, specs: Sequence[FeatureSpec], num_samples: int, dense_dim: int = 8,
             truth: GroundTruthModel | None = None):
    """Held-out samples from a separate lane; never overlaps the training stream."""
    slots = np.arange(num_samples, dtype=np.int64)
    return _draw(global_seed, _LANE_EVAL, 0, np.zeros(num_samples, dtype=np.int64), slots,
                 specs, dense_dim, truth)
