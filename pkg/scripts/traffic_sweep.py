"""Per-rank all-to-all bytes, simulated QPS and memory as the group count M varies.

Uniform ID demand (zipf exponent 0) at T=8, so the lookup bytes per rank should
drop as 1/M exactly.
"""

import argparse

from sparse2d.cli import simulate_run
from sparse2d.config import load

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--ranks", type=int, default=8)
    ap.add_argument("--groups", default="1,2,4,8")
    ap.add_argument("--steps", type=int, default=10)
    a = ap.parse_args()
    base = ["optimizer.eta=0.05", f"run.steps={a.steps}", "data.zipf=0", "data.num_ids=4096",
            f"topology.ranks={a.ranks}"]
    print("M,lookup_a2a_bytes_per_rank,ratio_vs_M1,qps_sim,peak_mem_sim,imbalance_ratio")
    ref = None
    for M in (int(x) for x in a.groups.split(",")):
        cfg = load(None, base + [f"topology.groups={M}"])
        s, _ = simulate_run(cfg, a.steps)
        ref = ref or s["lookup_a2a_bytes_per_rank"]
        print(f"{M},{s['lookup_a2a_bytes_per_rank']},{s['lookup_a2a_bytes_per_rank'] / ref:.6g},"
              f"{s['qps_sim']:.6g},{s['peak_mem_sim']},{s['imbalance_ratio']:.4f}")
