"""Training loop for the toy DLRM under 2D sparse parallelism.

Each step, every group runs forward/backward on its own slice of the global
batch. Pooled embeddings and their gradients travel through the within-group
all-to-all. Shard owners apply row-wise AdaGrad to the group-level gradient.
On sync steps the M replicas of every shard are averaged, weights then moments.
Dense MLP parameters stay data parallel and take a plain SGD step on the
global-batch mean gradient.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from sparse2d import _kernels
from sparse2d import collectives as coll
from sparse2d.data import FeatureSpec, draw_global, eval_set, ground_truth
from sparse2d.embedding import EmbeddingTable, atomic_write, init_table, load_table, pool_partial, table_to_bytes
from sparse2d.model import (ModelConfig, backward, dense_from_bytes, dense_to_bytes, forward, init_dense,
                            log_loss_from_logits, sigmoid)
from sparse2d.optimizer import OptimizerConfig, apply_rows, effective_lr, scatter_row_grads
from sparse2d.planner import ShardingPlan, plan_greedy, profiles_from_specs

NE_SIGNIFICANT = 0.0002


class NumericalAbort(FloatingPointError):
    pass


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    specs: tuple[FeatureSpec, ...] = tuple(FeatureSpec(t, 10_000, 1.05, 4) for t in range(8))
    batch_per_rank: int = 4
    dense_dim: int = 8
    label_scale: float = 1.5
    label_bias: float = -1.0
    eval_samples: int = 100_000

    def __post_init__(self):
        if self.batch_per_rank < 1:
            raise ValueError("data.batch_per_rank must be >= 1")
        if not self.specs:
            raise ValueError("at least one sparse feature is required")
        if self.eval_samples < 1:
            raise ValueError("data.eval_samples must be >= 1")


@dataclass(frozen=True)
class SimCost:
    """Compute-side constants for the simulated step latency."""

    lookup_s_per_row: float = 2e-8
    mlp_s_per_sample: float = 5e-7


@dataclass(frozen=True)
class TrainRunConfig:
    topology: coll.Topology = coll.Topology(8, 1)
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    steps: int = 1000
    sync_interval: int = 1
    eval_every: int = 100
    sharding: str = "row-wise"
    bandwidth: coll.BandwidthModel = coll.BandwidthModel()
    sim: SimCost = SimCost()
    workers: int = 1
    trace_steps: int = 0
    fused: bool = True

    def __post_init__(self):
        if self.sync_interval < 1:
            raise ValueError("run.sync_interval must be >= 1")
        if self.steps < 0:
            raise ValueError("run.steps must be >= 0")
        if self.workers < 1:
            raise ValueError("run.workers must be >= 1")


@dataclass(frozen=True)
class NEReport:
    ne: float
    baseline_ctr: float
    eval_samples: int
    ne_gap_vs_baseline: float | None = None

    @property
    def significant(self) -> bool:
        return self.ne_gap_vs_baseline is not None and abs(self.ne_gap_vs_baseline) >= NE_SIGNIFICANT


def _entropy(ctr: float) -> float:
    if ctr <= 0.0 or ctr >= 1.0:
        raise ValueError("NE is undefined when every label is identical")
    return -(ctr * math.log(ctr) + (1 - ctr) * math.log1p(-ctr))


def evaluate_ne(probs, labels) -> NEReport:
    """Mean log loss divided by the entropy of the constant average-CTR predictor."""
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise ValueError("NE needs a nonempty evaluation set")
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-15, 1 - 1e-15)
    ctr = float(y.mean())
    base = _entropy(ctr)
    ce = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p))
    return NEReport(float(ce / base), ctr, int(y.size))


def ne_from_logits(logits, labels) -> NEReport:
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise ValueError("NE needs a nonempty evaluation set")
    ctr = float(y.mean())
    base = _entropy(ctr)
    return NEReport(float(np.mean(log_loss_from_logits(logits, y))) / base, ctr, int(y.size))


def ne_gap(ne: float, baseline_ne: float) -> float:
    """Relative NE gap; positive means worse than the baseline."""
    return (ne - baseline_ne) / baseline_ne


METRIC_COLUMNS = ("step", "loss", "ne", "eff_lr_p50", "eff_lr_p99", "v_mean")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


@dataclass
class RunResult:
    metrics: list[tuple] = field(default_factory=list)
    final: NEReport | None = None
    traces: coll.TraceLog = field(default_factory=coll.TraceLog)
    step_latency: list[dict] = field(default_factory=list)
    rank_lookups: list[list[int]] = field(default_factory=list)

    def metrics_csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in self.metrics:
            w.writerow([fmt(x) for x in row])
        return buf.getvalue()


class _Base:
    """State and helpers shared by the 2D trainer and the full model-parallel reference."""

    replicas: int

    def __init__(self, cfg: TrainRunConfig, plan_ranks: int):
        self.cfg = cfg
        d = cfg.data
        self.specs = d.specs
        self.F = len(d.specs)
        self.D = cfg.model.dim
        self.truth = ground_truth(d.seed, d.specs, d.dense_dim, d.label_scale, d.label_bias)
        profiles = profiles_from_specs(d.specs, d.batch_per_rank * cfg.topology.T, self.D)
        self.plan: ShardingPlan = plan_greedy(profiles, plan_ranks, cfg.sharding)
        self.plan.validate({s.table_id: s.num_ids for s in d.specs})
        self.shards = [self.plan.shards_of(s.table_id) for s in d.specs]
        # owner-major order used when summing partial pools
        self.pool_order = [sorted(range(len(sh)), key=lambda i, sh=sh: (sh[i].local_rank, sh[i].row_lo))
                           for sh in self.shards]
        base = [init_table(s.table_id, s.num_ids, self.D, cfg.model.init_seed) for s in d.specs]
        self.W = [np.repeat(t.weights[None], self.replicas, axis=0) for t in base]
        self.V = [np.repeat(t.moments[None], self.replicas, axis=0) for t in base]
        self.params = init_dense(cfg.model, self.F, d.dense_dim)
        self.step = 0
        self._eval = None

    def eval_data(self):
        if self._eval is None:
            d = self.cfg.data
            self._eval = eval_set(d.seed, d.specs, d.eval_samples, d.dense_dim, self.truth)
        return self._eval

    def eval_logits(self, replica: int = 0, chunk: int = 25_000):
        ids, dense, labels = self.eval_data()
        out = []
        for lo in range(0, labels.shape[0], chunk):
            sl = slice(lo, lo + chunk)
            pooled = [self.W[f][replica][ids[f][sl]].astype(np.float64).sum(axis=1) for f in range(self.F)]
            out.append(forward(self.params, pooled, dense[sl])[0])
        return np.concatenate(out), labels

    def evaluate(self) -> NEReport:
        logits, labels = self.eval_logits()
        return ne_from_logits(logits, labels)

    def eff_lr_stats(self):
        v = np.concatenate([m[0] for m in self.V]).astype(np.float64)
        touched = v[v > 0]
        if touched.size == 0:
            # every row untrained so far
            return float("nan"), float("nan"), 0.0
        lr = effective_lr(touched, self.cfg.optimizer)
        return float(np.percentile(lr, 50)), float(np.percentile(lr, 99)), float(v.mean())

    def _dense_update(self, grad_sums: Sequence[dict], global_batch: int):
        eta = self.cfg.optimizer.eta
        for name in self.params:
            total = grad_sums[0][name].astype(np.float64)
            for g in grad_sums[1:]:
                total = total + g[name]
            self.params[name] = self.params[name] - eta * (total / global_batch)

    def _pool(self, f, replica, ids):
        """Pooled embeddings from per-shard partial sums, summed owner-major."""
        parts = [pool_partial(self.W[f][replica][e.row_lo:e.row_hi], e.row_lo, e.row_hi, ids)
                 for e in self.shards[f]]
        out = parts[self.pool_order[f][0]]
        for i in self.pool_order[f][1:]:
            out = out + parts[i]
        return out

    def tables(self, replica: int = 0) -> list[EmbeddingTable]:
        return [EmbeddingTable(s.table_id, self.W[f][replica], self.V[f][replica])
                for f, s in enumerate(self.specs)]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for t in self.tables():
            atomic_write(directory / f"table_{t.table_id}.bin", table_to_bytes(t))
        atomic_write(directory / "dense.bin", dense_to_bytes(self.params))

    def load(self, directory) -> None:
        directory = Path(directory)
        for f, s in enumerate(self.specs):
            t = load_table(directory / f"table_{s.table_id}.bin")
            if t.weights.shape != self.W[f].shape[1:]:
                raise ValueError(f"checkpoint table {s.table_id} has shape {t.weights.shape}")
            self.W[f][:] = t.weights
            self.V[f][:] = t.moments
        self.params = dense_from_bytes((directory / "dense.bin").read_bytes())

    def _record(self, result: RunResult, loss: float):
        ne = self.evaluate()
        p50, p99, vmean = self.eff_lr_stats()
        result.metrics.append((self.step, loss, ne.ne, p50, p99, vmean))
        result.final = ne

    def run(self, steps: int | None = None, evaluate: bool = True) -> RunResult:
        steps = self.cfg.steps if steps is None else steps
        result = RunResult()
        every = self.cfg.eval_every if evaluate else 0
        loss = float("nan")
        for k in range(steps):
            loss = self.train_step(result)
            if every and self.step % every == 0 and k != steps - 1:
                self._record(result, loss)
        self.finish()
        if steps and evaluate:
            self._record(result, loss)
        return result

    def finish(self) -> None:
        pass


class TwoDTrainer(_Base):
    """M replicas of every table, each row-sharded over the N ranks of its group.

    A step runs in phases: embedding lookup (within-group all-to-all), the MLP
    forward/backward on the global batch, gradient all-to-all plus row updates
    on the shard owners, then cross-group sync. The lookup and update phases
    have two executions: routed, group by group through the simulated
    collectives (traces are recorded), and fused, one vectorized pass over all
    groups. Both give bitwise identical states; steps that need traces are always routed.
    """

    def __init__(self, cfg: TrainRunConfig):
        self.replicas = cfg.topology.M
        super().__init__(cfg, cfg.topology.N)
        self.topology = cfg.topology
        N = self.topology.N
        # owner local rank -> [(feature, shard index)] in (feature, row_lo) order
        self.owned = [[(f, i) for f in range(self.F) for i, e in enumerate(self.shards[f])
                       if e.local_rank == n] for n in range(N)]
        self.dirty = [np.zeros(s.num_ids, dtype=bool) for s in self.specs]
        gsz = N * cfg.data.batch_per_rank
        self._sample_group = np.repeat(np.arange(self.topology.M, dtype=np.int64), gsz)
        self._pool_lo = [np.array([self.shards[f][i].row_lo for i in self.pool_order[f]], dtype=np.int64)
                         for f in range(self.F)]
        self._pool_hi = [np.array([self.shards[f][i].row_hi for i in self.pool_order[f]], dtype=np.int64)
                         for f in range(self.F)]
        # scratch for the fused update, kept zeroed between calls
        R_max = max(s.num_ids for s in self.specs)
        self._acc = np.zeros((self.topology.M, R_max, self.D))
        self._seen = np.zeros((self.topology.M, R_max), dtype=bool)
        self._pool_exec = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def _map_groups(self, fn, jobs):
        if self._pool_exec is not None and len(jobs) > 1:
            return list(self._pool_exec.map(lambda j: fn(*j), jobs))
        return [fn(*j) for j in jobs]

    # -- routed execution -------------------------------------------------
    def _routed_lookup(self, m, ids):
        topo, N, b, D = self.topology, self.topology.N, self.cfg.data.batch_per_rank, self.D
        partials = {}
        for n in range(N):
            for f, i in self.owned[n]:
                e = self.shards[f][i]
                partials[f, i] = pool_partial(self.W[f][m][e.row_lo:e.row_hi], e.row_lo, e.row_hi, ids[f])
        payload = [[np.stack([partials[k][dst * b:(dst + 1) * b] for k in self.owned[src]])
                    if self.owned[src] else np.zeros((0, b, D)) for dst in range(N)] for src in range(N)]
        delivered, trace = coll.route_all_to_all(topo, m, payload, self.cfg.bandwidth, kernel="lookup_a2a")
        pooled = []
        for f in range(self.F):
            per_dst = []
            for dst in range(N):
                acc = None
                for src in range(N):
                    for j, (ff, _) in enumerate(self.owned[src]):
                        if ff == f:
                            part = delivered[dst][src][j]
                            acc = part if acc is None else acc + part
                per_dst.append(acc)
            pooled.append(np.concatenate(per_dst, axis=0))
        return pooled, trace

    def _routed_update(self, m, ids, d_pooled):
        topo, N, b, D = self.topology, self.topology.N, self.cfg.data.batch_per_rank, self.D
        # each rank sends every owner the pooled-gradient rows for that owner's shards
        payload = [[np.stack([d_pooled[f][src * b:(src + 1) * b] for f, _ in self.owned[dst]])
                    if self.owned[dst] else np.zeros((0, b, D)) for dst in range(N)] for src in range(N)]
        delivered, trace = coll.route_all_to_all(topo, m, payload, self.cfg.bandwidth, kernel="grad_a2a")
        touched, lookups = [], [0] * N
        for n in range(N):
            for j, (f, i) in enumerate(self.owned[n]):
                e = self.shards[f][i]
                d_full = np.concatenate([delivered[n][src][j] for src in range(N)], axis=0)
                rows, g, counts = scatter_row_grads(ids[f], d_full, N * b, e.row_lo, e.row_hi)
                apply_rows(self.W[f][m], self.V[f][m], rows, g, self.cfg.optimizer)
                touched.append((f, rows))
                lookups[n] += int(counts.sum())
        return trace, touched, lookups

    # -- fused execution --------------------------------------------------
    def _fused_lookup(self, ids):
        pooled = []
        for f in range(self.F):
            out = np.empty((ids[f].shape[0], self.D))
            _kernels.pool_fused(self.W[f], ids[f], self._sample_group, self._pool_lo[f], self._pool_hi[f], out)
            pooled.append(out)
        return pooled

    def _fused_update(self, ids, d_pooled):
        opt = self.cfg.optimizer
        gsz = self.topology.N * self.cfg.data.batch_per_rank
        for f in range(self.F):
            if not np.isfinite(d_pooled[f]).all():
                raise ValueError("non-finite gradient passed to row-wise AdaGrad")
            R = self.specs[f].num_ids
            _kernels.update_fused(self.W[f], self.V[f], ids[f], self._sample_group, d_pooled[f], gsz,
                                  opt.eta, opt.eps, opt.c, opt.variant == "sgd",
                                  self._acc[:, :R], self._seen[:, :R], self.dirty[f])

    def train_step(self, result: RunResult | None = None) -> float:
        cfg, topo = self.cfg, self.topology
        d = cfg.data
        b, N, M = d.batch_per_rank, topo.N, topo.M
        ids, dense, labels = draw_global(d.seed, self.step, topo.T, d.specs, b, d.dense_dim, self.truth)
        labels = labels.astype(np.float64)
        gsz = N * b
        tracing = result is not None and self.step < cfg.trace_steps
        routed = tracing or not cfg.fused
        traces = []
        if routed:
            group_ids = [[a[m * gsz:(m + 1) * gsz] for a in ids] for m in range(M)]
            outs = self._map_groups(self._routed_lookup, [(m, group_ids[m]) for m in range(M)])
            pooled = [np.concatenate([o[0][f] for o in outs], axis=0) for f in range(self.F)]
            traces += [o[1] for o in outs]
        else:
            pooled = self._fused_lookup(ids)
        logits, cache = forward(self.params, pooled, dense)
        loss = float(log_loss_from_logits(logits, labels).sum()) / (M * gsz)
        if not math.isfinite(loss):
            raise NumericalAbort(f"non-finite training loss at step {self.step}")
        grads, d_pooled = backward(self.params, cache, sigmoid(logits) - labels, self.F, self.D)
        if routed:
            jobs = [(m, group_ids[m], [x[m * gsz:(m + 1) * gsz] for x in d_pooled]) for m in range(M)]
            outs = self._map_groups(self._routed_update, jobs)
            for tr, touched, _ in outs:
                traces.append(tr)
                for f, rows in touched:
                    self.dirty[f][rows] = True
        else:
            self._fused_update(ids, d_pooled)
        self._dense_update([grads], M * gsz)
        self.step += 1
        if self.step % cfg.sync_interval == 0:
            traces += self.sync(trace=tracing)
        if tracing:
            result.traces.extend(self.step, traces)
            lookups = [x for o in outs for x in o[2]]
            result.rank_lookups.append(lookups)
            compute = [n * cfg.sim.lookup_s_per_row + b * cfg.sim.mlp_s_per_sample for n in lookups]
            result.step_latency.append(coll.simulate_step_latency(traces, compute))
        return loss

    def sync(self, trace: bool = True) -> list[coll.CollectiveTrace]:
        """Average every shard's weights, then moments, across the M replicas.

        Only rows touched since the last sync can differ between replicas. The
        rest are bitwise equal, averaging leaves them unchanged, so they are skipped.
        """
        topo, model = self.topology, self.cfg.bandwidth
        if not trace:
            for f in range(self.F):
                _kernels.sync_fused(self.W[f], self.V[f], self.dirty[f])
            return []
        traces = []
        for arrays in (self.W, self.V):
            for f in range(self.F):
                dirty = np.flatnonzero(self.dirty[f])
                for e in self.shards[f]:
                    local = dirty[(dirty >= e.row_lo) & (dirty < e.row_hi)] - e.row_lo
                    views = [arrays[f][m][e.row_lo:e.row_hi] for m in range(topo.M)]
                    mean, tr = coll.all_reduce_mean_across_groups(topo, e.local_rank, views, model, rows=local)
                    arrays[f][:, e.row_lo + local] = mean
                    traces.append(tr)
        for mask in self.dirty:
            mask[:] = False
        return traces

    def replica_discrepancy(self) -> float:
        """Largest absolute weight or moment difference between any replica and replica 0."""
        worst = 0.0
        for arrays in (self.W, self.V):
            for a in arrays:
                if a.shape[0] > 1:
                    worst = max(worst, float(np.max(np.abs(a[1:].astype(np.float64) - a[:1]))))
        return worst

    def finish(self) -> None:
        if self.step % self.cfg.sync_interval:
            self.sync(trace=False)
        if self._pool_exec is not None:
            self._pool_exec.shutdown()
            self._pool_exec = None


class FullModelParallelTrainer(_Base):
    """Reference path: one table copy sharded over all T ranks, no replicas, no sync."""

    def __init__(self, cfg: TrainRunConfig):
        self.replicas = 1
        super().__init__(cfg, cfg.topology.T)

    def train_step(self, result: RunResult | None = None) -> float:
        cfg, d = self.cfg, self.cfg.data
        T, b = cfg.topology.T, d.batch_per_rank
        ids, dense, labels = draw_global(d.seed, self.step, T, d.specs, b, d.dense_dim, self.truth)
        labels = labels.astype(np.float64)
        pooled = [self._pool(f, 0, ids[f]) for f in range(self.F)]
        logits, cache = forward(self.params, pooled, dense)
        loss = float(log_loss_from_logits(logits, labels).sum()) / (T * b)
        if not math.isfinite(loss):
            raise NumericalAbort(f"non-finite training loss at step {self.step}")
        grads, d_pooled = backward(self.params, cache, sigmoid(logits) - labels, self.F, self.D)
        for f in range(self.F):
            for e in self.shards[f]:
                rows, g, _ = scatter_row_grads(ids[f], d_pooled[f], T * b, e.row_lo, e.row_hi)
                apply_rows(self.W[f][0], self.V[f][0], rows, g, cfg.optimizer)
        self._dense_update([grads], T * b)
        self.step += 1
        return loss


def make_trainer(cfg: TrainRunConfig, reference: bool = False):
    return FullModelParallelTrainer(cfg) if reference else TwoDTrainer(cfg)
