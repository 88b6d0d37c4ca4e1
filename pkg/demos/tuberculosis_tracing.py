"""Fifteen years of a tuberculosis-like epidemic with contact tracing.

One trajectory of the stochastic model in the fig2.cfg regime (time in
years, Model C tracing, detections counted as contacts for four years),
next to the deterministic limit solved on the same horizon.  Yearly
detection counts are split into spontaneous and traced.

    python demos/tuberculosis_tracing.py [output_dir]
"""
import sys
from pathlib import Path

import numpy as np

from ctsir.config import load_config
from ctsir.limit import solve_limit
from ctsir.simulator import simulate, write_trajectory_csv

HERE = Path(__file__).resolve().parent


def main(out=None):
    cfg = load_config(HERE / "fig2.cfg")
    spec = cfg.model_spec()
    log = simulate(cfg.simulation_config())
    print(f"simulated {len(log)} events over {cfg.horizon:g} {cfg.time_unit}")

    years = np.arange(int(cfg.horizon) + 1)
    spont = np.histogram(log.t[log.event == 3], bins=years)[0]
    traced = np.histogram(log.t[log.event == 4], bins=years)[0]

    sol = solve_limit(spec, cfg.s0, cfg.i0, cfg.horizon, cfg.h)
    step = int(round(1.0 / cfg.h))
    # limiting yearly detections: integral of lambda2 i + tracing rate
    rate = sol.b
    cum = np.concatenate([[0.0], np.cumsum(0.5 * cfg.h * (rate[1:] + rate[:-1]))])
    limit_yearly = np.diff(cum[::step])

    print(f"{'year':>4} {'spont':>6} {'traced':>6} {'total':>6} {'limit':>8} {'I(end)':>7}")
    for y in range(len(spont)):
        I_end = log.state_at(float(y + 1)).I
        print(f"{y + 1:>4} {spont[y]:>6} {traced[y]:>6} {spont[y] + traced[y]:>6} "
              f"{limit_yearly[y]:>8.1f} {I_end:>7}")
    total = int(spont.sum() + traced.sum())
    print(f"cumulated detections: {total} (limit {cum[-1]:.0f}), "
          f"traced share {traced.sum() / max(total, 1):.3f}")

    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        grid = np.linspace(0.0, cfg.horizon, cfg.grid_points)
        write_trajectory_csv(log, out / "trajectory.csv", grid)
        sol.to_csv(out / "limit.csv")
        print(f"wrote {out / 'trajectory.csv'} and {out / 'limit.csv'}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
