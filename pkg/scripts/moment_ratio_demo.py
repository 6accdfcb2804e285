"""Monte Carlo moment increment ratio vs the closed form, and the suggested c."""

import argparse

from sparse2d.moments import GradientNoiseModel, closed_form_ratio, estimate_increment_ratio, recommend_c

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--batch", type=int, default=32)
    a = ap.parse_args()
    print("M,mu_norm,sigma,mc_ratio,std_error,closed_form,recommend_c")
    for M in (2, 4, 8):
        for mu_norm in (0.0, 0.1, 0.5, 1.0, 3.0):
            model = GradientNoiseModel.isotropic(mu_norm, 1.0, a.dim, a.batch)
            rep = estimate_increment_ratio(model, M, a.trials, seed=M)
            print(f"{M},{mu_norm},1.0,{rep.ratio_estimate:.5f},{rep.std_error:.5f},"
                  f"{closed_form_ratio(model, M):.5f},{recommend_c(model, M):.5f}")
