"""Command line entry point: ``ctsir <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 failed check (``verify`` and ``stationary``).  Artifacts go to
``--out``, else ``$CTSIR_OUTPUT_DIR``, else ``output_dir`` from the config,
else the current directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checks import oracle_check, stationary_check
from .config import ConfigError, RunConfig, load_config
from .fluctuations import clt_experiment
from .inference import ConvergenceError, InferenceError, fit_closed_form, fit_numeric
from .limit import LimitInstabilityError, solve_limit, solve_limit_exponential_reduction
from .model import DomainError, Exponential, parse_weight
from .observed import ingest_observed
from .oracle import CapsTooSmall
from .simulator import (SimulationError, read_event_log, simulate, write_event_log,
                        write_trajectory_csv)

OUTPUT_ENV = "CTSIR_OUTPUT_DIR"


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, cfg: RunConfig | None = None) -> str:
    d = args.out or os.environ.get(OUTPUT_ENV) or (cfg.output_dir if cfg else "") or "."
    os.makedirs(d, exist_ok=True)
    return d


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    over = {"seed": getattr(args, "seed", None)}
    if getattr(args, "h", None) is not None:
        over["h"] = args.h
    if getattr(args, "replicas", None) is not None:
        over["replicas"] = args.replicas
    return load_config(args.config, over)


def cmd_simulate(args):
    cfg = _config(args)
    traj = simulate(cfg.simulation_config())
    out = _out_dir(args, cfg)
    write_event_log(traj, os.path.join(out, "events.jsonl"))
    grid = np.linspace(0.0, cfg.horizon, cfg.grid_points)
    write_trajectory_csv(traj, os.path.join(out, "trajectory.csv"), grid)
    _info(f"{len(traj)} events, {int(traj.R_count[-1]) if len(traj) else 0} detections "
          f"-> {out}")


def cmd_limit(args):
    cfg = _config(args)
    spec = cfg.model_spec()
    solver = solve_limit_exponential_reduction if args.reduced else solve_limit
    sol = solver(spec, cfg.s0, cfg.i0, cfg.horizon, cfg.h)
    out = _out_dir(args, cfg)
    sol.to_csv(os.path.join(out, "limit.csv"))
    _info(f"limit solution with {len(sol.t)} grid points -> {out}")


def cmd_fluct(args):
    cfg = _config(args)
    spec = cfg.model_spec()
    n_list = tuple(args.n_list) if args.n_list else (cfg.n_list or (cfg.n,))
    tests = tuple(parse_weight(s) for s in cfg.test_functions)
    rep = clt_experiment(spec, cfg.s0, cfg.i0, cfg.horizon, n_list, cfg.replicas, cfg.seed,
                         tests, h=cfg.h, threads=args.threads)
    out = _out_dir(args, cfg)
    with open(os.path.join(out, "fluct_covariance.csv"), "w", newline="") as fh:
        fh.write(rep.to_csv())
    with open(os.path.join(out, "fluct_summary.json"), "w") as fh:
        fh.write(rep.to_json())
    if not isinstance(spec.psi, Exponential):
        _info("no closed covariance system for this weight: empirical values only")
    _info(f"fluctuation report -> {out}")


def cmd_fit(args):
    psi = parse_weight(args.psi) if args.psi else None
    if args.log:
        log = read_event_log(args.log)
    else:
        log = ingest_observed(args.observed, n=args.n, I0=args.I0, S0=args.S0,
                              horizon=args.horizon, psi=psi)
    if psi is None and log.psi is None:
        raise UsageError("--psi is required when the log does not name a weight")
    if args.numeric:
        res = fit_numeric(log, args.model, psi)
    else:
        res = fit_closed_form(log, args.model, psi)
    out = _out_dir(args)
    d = res.to_dict()
    d["psi"] = (psi or log.psi).to_string()
    _write_json(os.path.join(out, "fit.json"), d)
    print(json.dumps(d, sort_keys=True))


def cmd_verify(args):
    cfg = _config(args)
    spec = cfg.model_spec()
    t = args.t if args.t is not None else cfg.horizon
    rep = oracle_check(spec, cfg.S0, cfg.I0, t, cfg.replicas, cfg.seed,
                       caps=cfg.caps or None, eps=cfg.eps, threads=args.threads)
    out = _out_dir(args, cfg)
    _write_json(os.path.join(out, "verify_report.json"), rep.to_dict())
    for k, v in rep.marginals.items():
        _info(f"{k}: chi2={v['chi2']:.3f} dof={v['dof']} p={v['p_value']:.4f}")
    if not rep.passed:
        raise CheckFailed("simulator marginals differ from the oracle")


def cmd_stationary(args):
    rep = stationary_check(args.lambda0, args.mu0, args.t, args.replicas, args.seed,
                           threads=args.threads)
    out = _out_dir(args)
    _write_json(os.path.join(out, "stationary_report.json"), rep.to_dict())
    _info(f"mean={rep.mean:.4f} chi2={rep.chi2:.3f} p={rep.p_value:.4f}")
    if not rep.passed:
        raise CheckFailed("susceptible law differs from the Poisson law")


def _info(msg):
    print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctsir", description="SIR epidemics with contact tracing")
    common = _Parser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="sample one trajectory")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("limit", parents=[common], help="solve the deterministic limit")
    s.add_argument("--config", required=True)
    s.add_argument("--h", type=float)
    s.add_argument("--reduced", action="store_true",
                   help="use the ODE reduction (exponential weight only)")
    s.set_defaults(func=cmd_limit)

    s = sub.add_parser("fluct", parents=[common], help="fluctuation (CLT) report")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--replicas", type=int)
    s.add_argument("--n-list", type=int, nargs="+")
    s.add_argument("--h", type=float)
    s.set_defaults(func=cmd_fluct)

    s = sub.add_parser("fit", parents=[common], help="fit (lambda2, lambda3)")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--log", help="event log (JSON lines)")
    src.add_argument("--observed", help="observed CSV (date,event_type[,infection_date])")
    s.add_argument("--model", required=True, choices=["A", "B", "C"])
    s.add_argument("--psi", help="weight, e.g. exp:0.01, ind:4, gamma:2,1.5, const:1")
    s.add_argument("--numeric", action="store_true", help="Newton iterations instead of closed form")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--I0", type=int, default=0)
    s.add_argument("--S0", type=int, default=0)
    s.add_argument("--horizon", type=float)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("verify", parents=[common], help="simulator vs uniformization oracle")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--replicas", type=int)
    s.add_argument("--t", type=float)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("stationary", parents=[common], help="susceptible law vs Poisson")
    s.add_argument("--lambda0", type=float, default=2.0)
    s.add_argument("--mu0", type=float, default=1.0)
    s.add_argument("--t", type=float, default=50.0)
    s.add_argument("--replicas", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_stationary)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except (UsageError, ConfigError, FileNotFoundError, InferenceError, TypeError) as e:
        _info(f"error: {e}")
        return 1
    except CheckFailed as e:
        _info(f"check failed: {e}")
        return 3
    except (SimulationError, LimitInstabilityError, CapsTooSmall, ConvergenceError,
            ArithmeticError) as e:
        _info(f"numerical failure: {e}")
        return 2
    except (DomainError, ValueError) as e:
        _info(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
