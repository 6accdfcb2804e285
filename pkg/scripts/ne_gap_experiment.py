"""NE gap of the M=4 run against the M=1 baseline as the moment scale c grows.

Runs the desk toy model for every (seed, c) pair and writes
runs/ne_gap/comparison.csv. About three minutes per seed on one core.

    python3 scripts/ne_gap_experiment.py [--steps 200000] [--seeds 0,1,2]
"""

import argparse
import sys
from pathlib import Path

from sparse2d import cli

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--values", default="1,2,4")
    ap.add_argument("--out", default=str(ROOT / "runs" / "ne_gap"))
    a = ap.parse_args()
    sys.exit(cli.main([
        "sweep", "--config", str(ROOT / "configs" / "desk.cfg"), "--axis", "c", "--values", a.values,
        "--seeds", a.seeds, "--out", a.out, "--set", f"run.steps={a.steps}",
        "--set", f"run.eval_every={max(a.steps // 10, 1)}",
    ]))
