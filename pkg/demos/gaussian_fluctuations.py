"""Scaled fluctuations around the limit versus the Lyapunov covariance.

Runs the fluctuation experiment described by clt.cfg and prints, for each
n, the empirical variances of sqrt(n)(X_n - x) at the horizon next to the
variances propagated by the covariance ODE, plus normality diagnostics.

    python demos/gaussian_fluctuations.py
"""
from pathlib import Path

from ctsir.config import load_config
from ctsir.fluctuations import clt_experiment
from ctsir.model import parse_weight

HERE = Path(__file__).resolve().parent


def main(replicas=200):
    cfg = load_config(HERE / "clt.cfg")
    tests = [parse_weight(f) for f in cfg.test_functions]
    rep = clt_experiment(cfg.model_spec(), cfg.s0, cfg.i0, cfg.horizon, cfg.n_list, replicas,
                         cfg.seed, tests, h=cfg.h)
    for row in rep.rows:
        print(f"n = {row['n']} ({row['replicas']} replicas)")
        for name, emp, th, err in zip(("s", "i", "<r,psi>"), row["empirical_variance"],
                                      row["theoretical_variance"], row["relative_error"]):
            print(f"  var {name:<8} empirical {emp:9.4f}  limit {th:9.4f}  rel.err {err:.3f}")
        print(f"  martingale on i: variance {row['martingale_variance_i']:.4f}, "
              f"bracket {row['martingale_bracket_i']:.4f}")
        for lab, z in row["projections"].items():
            print(f"  {lab:<10} skewness z {z['skew_z']:+.2f}  kurtosis z {z['kurtosis_z']:+.2f}")


if __name__ == "__main__":
    main()
