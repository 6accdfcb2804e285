"""Flat ``section.key = value`` experiment configs.

Lines starting with ``#`` and blank lines are ignored. List-valued feature keys
take comma-separated values; a single value is broadcast to every table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from sparse2d.collectives import BandwidthModel, Topology
from sparse2d.data import FeatureSpec
from sparse2d.model import ModelConfig
from sparse2d.optimizer import OptimizerConfig
from sparse2d.trainer import DataConfig, SimCost, TrainRunConfig

_REQUIRED = object()


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(kind):
    def parse(text: str):
        return tuple(kind(x) for x in str(text).split(",") if x.strip())
    return parse


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "topology.ranks": (int, _REQUIRED),
    "topology.groups": (int, _REQUIRED),
    "data.seed": (int, 0),
    "data.num_tables": (int, 8),
    "data.num_ids": (_list(int), (10_000,)),
    "data.zipf": (_list(float), (1.05,)),
    "data.ids_per_sample": (_list(int), (4,)),
    "data.batch_per_rank": (int, 4),
    "data.dense_dim": (int, 8),
    "data.label_scale": (float, 1.5),
    "data.label_bias": (float, -1.0),
    "data.eval_samples": (int, 100_000),
    "model.dim": (int, 16),
    "model.dense_hidden": (int, 32),
    "model.over_hidden": (int, 64),
    "model.init_seed": (int, 1),
    "optimizer.eta": (float, _REQUIRED),
    "optimizer.eps": (float, 1e-8),
    "optimizer.c": (float, 1.0),
    "optimizer.variant": (str, "rowwise-adagrad"),
    "run.steps": (int, _REQUIRED),
    "run.eval_every": (int, 100),
    "run.sync_interval": (int, 1),
    "run.sharding": (str, "row-wise"),
    "run.trace_steps": (int, 0),
    "run.workers": (int, 1),
    "run.fused": (_bool, True),
    "bandwidth.alpha": (float, 10e-6),
    "bandwidth.inter": (float, 12.5e9),
    "bandwidth.intra": (float, 7 * 12.5e9),
    "bandwidth.ranks_per_host": (int, 8),
    "bandwidth.host_aligned_sync": (_bool, True),
    "sim.lookup_s_per_row": (float, 2e-8),
    "sim.mlp_s_per_sample": (float, 5e-7),
    "output.dir": (str, "runs"),
}

# keys that change how a run executes or where it writes, never what it computes
EXECUTION_ONLY = frozenset({"run.workers", "run.fused", "output.dir"})

SWEEP_AXES = {"c": "optimizer.c", "M": "topology.groups", "T": "topology.ranks",
              "sync_interval": "run.sync_interval"}


class ConfigError(ValueError):
    pass


def parse_text(text: str) -> dict[str, str]:
    raw, problems = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key in raw:
            problems.append(f"line {lineno}: duplicate key {key}")
        raw[key] = value
    if problems:
        raise ConfigError("; ".join(problems))
    return raw


def split_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _canonical(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_canonical(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved config: every schema key has a parsed value."""

    values: Mapping[str, object]
    run: TrainRunConfig = field(compare=False)

    @property
    def out_dir(self) -> Path:
        return Path(str(self.values["output.dir"]))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def header(self) -> str:
        return f"config_sha256={self.hash}"

    def to_text(self, execution: bool = False) -> str:
        """Resolved ``key = value`` lines; execution-only keys are left out unless asked for."""
        return "".join(f"{k} = {_canonical(v)}\n" for k, v in sorted(self.values.items())
                       if execution or k not in EXECUTION_ONLY)

    def with_values(self, updates: Mapping[str, object]) -> "ExperimentConfig":
        return resolve({k: _canonical(v) for k, v in {**self.values, **updates}.items()})


def _specs(v) -> tuple[FeatureSpec, ...]:
    n = v["data.num_tables"]
    if n < 1:
        raise ValueError("data.num_tables must be >= 1")
    cols = {}
    for key in ("data.num_ids", "data.zipf", "data.ids_per_sample"):
        vals = v[key]
        if len(vals) == 1:
            vals = vals * n
        if len(vals) != n:
            raise ValueError(f"{key} has {len(vals)} values for {n} tables")
        cols[key] = vals
    return tuple(FeatureSpec(t, cols["data.num_ids"][t], cols["data.zipf"][t], cols["data.ids_per_sample"][t])
                 for t in range(n))


def _build(v) -> TrainRunConfig:
    data = DataConfig(seed=v["data.seed"], specs=_specs(v), batch_per_rank=v["data.batch_per_rank"],
                      dense_dim=v["data.dense_dim"], label_scale=v["data.label_scale"],
                      label_bias=v["data.label_bias"], eval_samples=v["data.eval_samples"])
    return TrainRunConfig(
        topology=Topology(v["topology.ranks"], v["topology.groups"]),
        data=data,
        model=ModelConfig(v["model.dim"], v["model.dense_hidden"], v["model.over_hidden"], v["model.init_seed"]),
        optimizer=OptimizerConfig(v["optimizer.eta"], v["optimizer.eps"], v["optimizer.c"], v["optimizer.variant"]),
        steps=v["run.steps"], sync_interval=v["run.sync_interval"], eval_every=v["run.eval_every"],
        sharding=v["run.sharding"],
        bandwidth=BandwidthModel(v["bandwidth.alpha"], v["bandwidth.inter"], v["bandwidth.intra"],
                                 v["bandwidth.ranks_per_host"], v["bandwidth.host_aligned_sync"]),
        sim=SimCost(v["sim.lookup_s_per_row"], v["sim.mlp_s_per_sample"]),
        workers=v["run.workers"], trace_steps=v["run.trace_steps"], fused=v["run.fused"])


def resolve(raw: Mapping[str, str]) -> ExperimentConfig:
    """Parse and validate; every problem found is reported in one ConfigError."""
    problems = []
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        problems.append("unknown keys: " + ", ".join(unknown))
    missing = sorted(k for k, (_, d) in SCHEMA.items() if d is _REQUIRED and k not in raw)
    if missing:
        problems.append("missing keys: " + ", ".join(missing))
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
        elif default is not _REQUIRED:
            values[key] = default
    if problems:
        raise ConfigError("; ".join(problems))
    try:
        run = _build(values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(values, run)


def load(path: str | Path | None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    raw = parse_text(Path(path).read_text()) if path else {}
    for item in overrides:
        key, value = split_override(item)
        raw[key] = value
    return resolve(raw)
