"""Renormalized trajectories settle on the deterministic limit as n grows.

For each population scale n an ensemble is run in the endemic regime of
clt.cfg and the largest gap between the ensemble mean and the limit is
reported for s, i and <r, psi>.  The gap should shrink roughly like
1/sqrt(n) until it reaches the Monte Carlo floor.

    python demos/law_of_large_numbers.py
"""
from pathlib import Path

import numpy as np

from ctsir.config import load_config
from ctsir.limit import solve_limit_exponential_reduction
from ctsir.simulator import SimulationConfig, ensemble

HERE = Path(__file__).resolve().parent


def main(n_list=(100, 1000, 10000), replicas=100):
    cfg = load_config(HERE / "clt.cfg")
    spec = cfg.model_spec()
    sol = solve_limit_exponential_reduction(spec, cfg.s0, cfg.i0, cfg.horizon, cfg.h)
    grid = np.linspace(0.0, cfg.horizon, 11)
    idx = np.rint(grid / cfg.h).astype(int)
    ref = np.column_stack([sol.s[idx], sol.i[idx], sol.m[idx]])

    print(f"{'n':>6} {'sup|s|':>9} {'sup|i|':>9} {'sup|m|':>9} {'sqrt(n)*sup':>12}")
    for k, n in enumerate(n_list):
        sp = spec.with_n(n)
        sim = SimulationConfig(sp, int(round(n * cfg.s0)), int(round(n * cfg.i0)),
                               cfg.horizon, seed=cfg.seed + k)
        ens = ensemble(sim, replicas, grid)
        mean = ens.moments()["mean"][:, :3]
        gap = np.max(np.abs(mean - ref), axis=0)
        print(f"{n:>6} {gap[0]:>9.2e} {gap[1]:>9.2e} {gap[2]:>9.2e} "
              f"{np.sqrt(n) * gap.max():>12.3f}")


if __name__ == "__main__":
    main()
