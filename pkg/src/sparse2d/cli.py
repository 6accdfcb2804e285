"""Command line entry point: train, plan, cost, verify-prop1, simulate, sweep.

Exit codes: 0 success, 1 config or usage error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from sparse2d import cost, moments, planner
from sparse2d.config import SWEEP_AXES, ConfigError, ExperimentConfig, load
from sparse2d.embedding import atomic_write
from sparse2d.trainer import NumericalAbort, fmt, make_trainer, ne_gap

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
SIM_COLUMNS = ("qps_sim", "peak_mem_sim", "imbalance_ratio", "lookup_a2a_bytes_per_rank")
COMPARISON_COLUMNS = ("value", "final_ne", "ne_gap_vs_M1") + SIM_COLUMNS


def _csv(header: str, columns, rows) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(x) if isinstance(x, (int, float, np.number)) else x for x in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, text.encode())


# -- runs -----------------------------------------------------------------
def train_run(cfg: ExperimentConfig, out: Path, reference: bool = False, load_dir=None, save_dir=None):
    """One training run; writes metrics, plan, trace and final NE under ``out``."""
    trainer = make_trainer(cfg.run, reference=reference)
    if load_dir:
        trainer.load(load_dir)
    result = trainer.run()
    head = cfg.header()
    _write(out / "config.txt", f"# {head}\n" + cfg.to_text())
    _write(out / "metrics.csv", result.metrics_csv(head))
    _write(out / "plan.csv", f"# {head}\n" + trainer.plan.to_csv())
    if result.traces.rows:
        _write(out / "trace.csv", f"# {head}\n" + result.traces.to_csv())
    f = result.final
    _write(out / "final.csv", _csv(head, ("ne", "baseline_ctr", "eval_samples"),
                                   [(f.ne, f.baseline_ctr, f.eval_samples)] if f else []))
    if save_dir:
        trainer.save(save_dir)
    return result


def simulate_run(cfg: ExperimentConfig, steps: int):
    """Short fully traced run; returns (simulated stats, RunResult)."""
    run = cfg.run
    trainer = make_trainer(replace(run, steps=steps, trace_steps=steps, eval_every=0))
    result = trainer.run(evaluate=False)
    global_batch = run.topology.T * run.data.batch_per_rank
    mean_latency = float(np.mean([s["total"] for s in result.step_latency]))
    T, N = run.topology.T, run.topology.N
    row_bytes = run.model.dim * 4 + 4
    resident = [sum((e.row_hi - e.row_lo) * row_bytes for e in trainer.plan.owned_by(r % N)) for r in range(T)]
    buffers = [0] * T
    a2a_lookup = [0] * T
    for step in sorted({s for s, _ in result.traces.rows}):
        per = [0] * T
        for t in result.traces.for_step(step):
            if t.kind != "all-to-all":
                continue
            for r, s, rcv in zip(t.participants, t.bytes_sent, t.bytes_recv):
                per[r] += s + rcv
                if t.kernel == "lookup_a2a":
                    a2a_lookup[r] += s
        buffers = [max(a, b) for a, b in zip(buffers, per)]
    lookups = np.sum(np.asarray(result.rank_lookups, dtype=np.float64), axis=0)
    stats = {
        "qps_sim": global_batch / mean_latency,
        "peak_mem_sim": max(a + b for a, b in zip(resident, buffers)),
        "imbalance_ratio": planner.imbalance_ratio(lookups) if lookups.sum() > 0 else 1.0,
        "lookup_a2a_bytes_per_rank": max(a2a_lookup) // steps,
    }
    return stats, result


# -- subcommands ------------------------------------------------------------
def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"data.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    return load(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config(args)
    result = train_run(cfg, cfg.out_dir, args.reference, args.load, args.save)
    print(f"final_ne={fmt(result.final.ne) if result.final else 'nan'} {cfg.header()}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    steps = args.steps or cfg.run.trace_steps or 10
    stats, result = simulate_run(cfg, steps)
    head = cfg.header()
    trace_out = Path(args.trace_out) if args.trace_out else cfg.out_dir / "trace.csv"
    _write(trace_out, f"# {head}\n" + result.traces.to_csv())
    text = _csv(head, SIM_COLUMNS, [[stats[k] for k in SIM_COLUMNS]])
    _write(cfg.out_dir / "simulate.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plan(args) -> int:
    profiles = planner.read_profiles_csv(Path(args.profiles).read_text())
    plan = planner.plan_greedy(profiles, args.ranks, args.strategy)
    ratio = planner.imbalance_ratio(planner.per_rank_loads(plan, profiles))
    if args.out:
        _write(Path(args.out) / "plan.csv", plan.to_csv())
    else:
        sys.stdout.write(plan.to_csv())
    print(f"strategy={args.strategy} ranks={args.ranks} imbalance_ratio={fmt(ratio)} "
          f"status={planner.classify_imbalance(ratio)}")
    return EXIT_OK


def cmd_cost(args) -> int:
    rows = []
    for M in args.groups:
        bw = args.sync_bw if args.sync_bw is not None else cost.default_sync_bandwidth(M, args.inter_bw)
        rows.append((M, cost.memory_overhead(args.table_size_gb, M, args.total_gpus),
                     cost.sync_latency(args.table_size_gb, M, args.total_gpus, bw),
                     cost.sync_latency_with_alpha(args.table_size_gb, M, args.total_gpus, bw, args.alpha), bw))
    sys.stdout.write(_csv("", ("M", "mem_overhead_gb", "sync_latency_s", "sync_latency_with_alpha_s",
                               "sync_bw_gbps"), rows))
    return EXIT_OK


def cmd_verify_prop1(args) -> int:
    model = moments.GradientNoiseModel.isotropic(args.mu_norm, args.sigma, args.dim, args.batch)
    rep = moments.estimate_increment_ratio(model, args.groups, args.trials, args.seed, args.workers or 1)
    print(rep.csv_header() + ",closed_form")
    print(rep.csv_row() + "," + fmt(moments.closed_form_ratio(model, args.groups)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; choose from {', '.join(SWEEP_AXES)}")
    base = _config(args)
    key = SWEEP_AXES[args.axis]
    seeds = args.seeds or [base.values["data.seed"]]
    out = base.out_dir
    cache: dict[str, float] = {}

    def final_ne(cfg: ExperimentConfig, where: Path) -> float:
        # identical configs (by hash) are trained once
        if cfg.hash not in cache:
            cache[cfg.hash] = train_run(cfg, where).final.ne
        return cache[cfg.hash]

    points = [base.with_values({key: v}) for v in args.values]  # validates every point up front
    rows = []
    for value, point in zip(args.values, points):
        nes, gaps = [], []
        for seed in seeds:
            cfg = point.with_values({"data.seed": seed})
            ne = final_ne(cfg, out / f"{args.axis}={value}" / f"seed={seed}")
            ref = cfg.with_values({"topology.groups": 1, "optimizer.c": 1.0})
            ref_ne = final_ne(ref, out / "baseline_M1" / f"{args.axis}={value}" / f"seed={seed}")
            nes.append(ne)
            gaps.append(ne_gap(ne, ref_ne))
        stats, _ = simulate_run(point, args.sim_steps)
        rows.append((value, float(np.mean(nes)), float(np.mean(gaps)),
                     *(stats[k] for k in SIM_COLUMNS)))
    text = _csv(base.header() + f" axis={args.axis} seeds={','.join(map(str, seeds))}", COMPARISON_COLUMNS, rows)
    _write(out / "comparison.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def _number(text: str):
    return float(text) if any(ch in text for ch in ".eE") else int(text)


def _numbers(text: str):
    return [_number(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparse2d")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)

    sp = sub.add_parser("train")
    run_flags(sp)
    sp.add_argument("--reference", action="store_true", help="full model-parallel path, one table copy")
    sp.add_argument("--save")
    sp.add_argument("--load")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("simulate")
    run_flags(sp)
    sp.add_argument("--steps", type=int, default=0)
    sp.add_argument("--trace-out")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("sweep")
    run_flags(sp)
    sp.add_argument("--axis", required=True)
    sp.add_argument("--values", type=_numbers, required=True)
    sp.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")])
    sp.add_argument("--sim-steps", type=int, default=10)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("plan")
    sp.add_argument("--profiles", required=True, help="CSV: table_id,size_bytes,lookups[,num_rows]")
    sp.add_argument("--ranks", type=int, required=True)
    sp.add_argument("--strategy", choices=("table-wise", "row-wise"), default="table-wise")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("cost")
    sp.add_argument("--total-gpus", type=int, required=True)
    sp.add_argument("--groups", type=lambda s: [int(x) for x in s.split(",")], required=True)
    sp.add_argument("--table-size-gb", type=float, required=True)
    sp.add_argument("--sync-bw", type=float, help="GB/s; default: host-aligned rule on --inter-bw")
    sp.add_argument("--inter-bw", type=float, default=12.5)
    sp.add_argument("--alpha", type=float, default=10e-6)
    sp.set_defaults(fn=cmd_cost)

    sp = sub.add_parser("verify-prop1", help="Monte Carlo check of the moment increment ratio")
    sp.add_argument("--groups", type=int, required=True)
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--mu-norm", type=float, default=0.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(fn=cmd_verify_prop1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.fn(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
