#!/usr/bin/env python3
"""End-to-end scalar benchmark: CLT check, slope estimates, rate exports.

Writes everything under out/scalar_benchmark/.  Handy for eyeballing how the
-b(eps) log p estimates drift toward the predicted quadratic rate as the
noise shrinks.
"""

import math
import pathlib
import sys

from jumpmdp.experiments import ExperimentConfig, run_clt_check, run_mdp_slope
from jumpmdp.jump_sde import fluid_limit
from jumpmdp.mdp_limit import build_linearization, gaussian_covariance
from jumpmdp.models import build_model
from jumpmdp.rate import controllability_gramian, rate_to_point, sphere_minimum


def main() -> int:
    out = pathlib.Path("out/scalar_benchmark")
    out.mkdir(parents=True, exist_ok=True)
    cfg = ExperimentConfig(seed=0, threshold=1.0, out_dir=str(out))

    model = build_model(cfg.model, cfg.model_params)
    fluid, peak = fluid_limit(model, cfg.n_cells_analysis)
    sysm = build_linearization(model, fluid)
    w_t = controllability_gramian(sysm).matrix[0, 0]
    sigma_t = gaussian_covariance(sysm).terminal()[0, 0]
    print(f"fluid peak |x| = {peak:.6f}")
    print(f"Gramian W(T) = {w_t:.6f} (closed form {(1 - math.exp(-2)) / 2:.6f})")
    print(f"Lyapunov Sigma(T) = {sigma_t:.6f}")

    rate_val, zstar = sphere_minimum(controllability_gramian(sysm), cfg.threshold)
    print(f"predicted rate inf(|z|={cfg.threshold}) = {rate_val:.6f} at z* = {zstar}")
    sol = rate_to_point(sysm, zstar)
    sol.export_csv(out / "optimal_controls.csv")
    sol.path.to_csv(out / "optimal_path.csv")

    clt = run_clt_check(cfg, out_dir=str(out))
    print(
        f"CLT check: relative covariance error {clt.rel_frobenius_error:.3%}, "
        f"mean {clt.sample_mean[0]:+.4f} (3se = {3 * clt.mean_se[0]:.4f})"
    )

    res = run_mdp_slope(cfg, out_dir=str(out))
    print(f"{'eps':>8} {'kind':>6} {'p_hat':>12} {'-b log p':>10} {'predicted':>10}")
    for row in res.rows:
        slope = "   --   " if row.neg_b_log_p is None else f"{row.neg_b_log_p:8.4f}"
        print(
            f"{row.epsilon:8.3f} {row.estimator:>6} {row.p_hat:12.3e} "
            f"{slope:>10} {row.predicted_rate:10.4f}"
        )
    print(f"outputs in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
