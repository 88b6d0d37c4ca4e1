"""Maximum likelihood for the detection and tracing rates.

First a single fit on one simulated epidemic, comparing the closed form
with Newton iterations.  Then a small consistency study: RMSE should fall
like n^(-1/2) and the Wald intervals should cover about 95% of the time.

    python demos/estimating_tracing_rates.py
"""
from pathlib import Path

import numpy as np

from ctsir.config import load_config
from ctsir.inference import consistency_experiment, fit_closed_form, fit_numeric, rmse_slope
from ctsir.simulator import simulate

HERE = Path(__file__).resolve().parent


def main(n_list=(100, 400, 1600), replicas=200):
    cfg = load_config(HERE / "clt.cfg")
    spec = cfg.model_spec()
    model = spec.tracing.model

    log = simulate(cfg.simulation_config())
    cf = fit_closed_form(log, model)
    nw = fit_numeric(log, model)
    lo, hi = cf.confidence_interval().T
    print(f"true (lambda2, lambda3) = ({spec.lambda2}, {spec.lambda3})")
    print(f"closed form  {cf.theta[0]:.5f} {cf.theta[1]:.5f}  (K3={cf.K3}, K4={cf.K4})")
    print(f"newton       {nw.theta[0]:.5f} {nw.theta[1]:.5f}  ({nw.iterations} iterations)")
    print(f"95% intervals: lambda2 [{lo[0]:.4f}, {hi[0]:.4f}], lambda3 [{lo[1]:.4f}, {hi[1]:.4f}]")

    rows = consistency_experiment(spec, cfg.s0, cfg.i0, cfg.horizon, n_list, replicas,
                                  seed=cfg.seed)
    print(f"\n{'n':>6} {'rmse2':>9} {'rmse3':>9} {'cover2':>7} {'cover3':>7} {'excl':>5}")
    for r in rows:
        print(f"{r.n:>6} {r.rmse[0]:>9.2e} {r.rmse[1]:>9.2e} {r.coverage[0]:>7.3f} "
              f"{r.coverage[1]:>7.3f} {r.excluded:>5}")
    slope = rmse_slope(rows)
    print(f"log-log RMSE slopes: {np.round(slope, 3)} (expected about -0.5)")


if __name__ == "__main__":
    main()
