"""Simulator-versus-exact-law checks shared by the CLI and the test suite."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .model import Constant, InfectionRate, ModelSpec, TracingRate
from .oracle import (build_chain, chi_square_marginal, default_caps, marginals,
                     transient_distribution)
from .simulator import SimulationConfig, ensemble


@dataclass
class StationaryReport:
    lambda0: float
    mu0: float
    t: float
    replicas: int
    seed: int
    mean: float
    mean_se: float
    chi2: float
    dof: int
    p_value: float
    observed: list
    expected: list
    passed: bool

    def to_dict(self):
        return asdict(self)


def stationary_check(lambda0: float, mu0: float, t: float, replicas: int, seed: int,
                     n_bins: int = 11, alpha: float = 0.01, mean_tol: float = 0.06,
                     threads: int = 1) -> StationaryReport:
    """Susceptibles of the immigration-death chain at time t against Poisson(lambda0/mu0).

    Bins are {0, ..., n_bins - 1} and a pooled tail {>= n_bins}.
    """
    spec = ModelSpec(lambda0, mu0, 0.0, 0.0, InfectionRate("mass_action", 0.0),
                     TracingRate("C", 0.0), Constant(1.0), n=1)
    ens = ensemble(SimulationConfig(spec, 0, 0, t, seed=seed), replicas, [t], threads=threads)
    S = ens.state[:, -1, 0].astype(np.int64)
    obs = np.bincount(np.minimum(S, n_bins), minlength=n_bins + 1).astype(float)
    a = lambda0 / mu0
    p = stats.poisson.pmf(np.arange(n_bins), a)
    p = np.append(p, stats.poisson.sf(n_bins - 1, a))
    exp_ = replicas * p
    chi2 = float(np.sum((obs - exp_) ** 2 / exp_))
    dof = n_bins
    pval = float(stats.chi2.sf(chi2, dof))
    mean = float(S.mean())
    se = float(S.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0
    ok = pval > alpha and abs(mean - a) <= mean_tol
    return StationaryReport(lambda0, mu0, t, replicas, seed, mean, se, chi2, dof, pval,
                            obs.tolist(), exp_.tolist(), bool(ok))


@dataclass
class OracleReport:
    caps: tuple
    t: float
    replicas: int
    seed: int
    lost_mass: float
    truncation: float
    outside_caps: int
    marginals: dict
    passed: bool

    def to_dict(self):
        d = asdict(self)
        d["caps"] = list(self.caps)
        return d


def oracle_check(spec: ModelSpec, S0: int, I0: int, t: float, replicas: int, seed: int,
                 caps=None, eps: float = 1e-7, alpha: float = 0.001,
                 threads: int = 1) -> OracleReport:
    """Chi-square tests of simulated (S, I, R-count) marginals against uniformization."""
    caps = tuple(caps) if caps else default_caps(spec, S0, I0, t)
    chain = build_chain(spec, caps)
    p, lost, trunc = transient_distribution(chain, (S0, I0, 0), t, eps)
    marg = marginals(chain, p)
    ens = ensemble(SimulationConfig(spec, S0, I0, t, seed=seed), replicas, [t], threads=threads)
    st = ens.state[:, -1, :3].astype(np.int64)
    inside = (st[:, 0] <= caps[0]) & (st[:, 1] <= caps[1]) & (st[:, 2] <= caps[2])
    out = {}
    ok = True
    for j, name in enumerate(("S", "I", "R")):
        x = st[:, j]
        cnt = np.bincount(np.minimum(x, caps[j] + 1), minlength=caps[j] + 2).astype(float)
        # last cell: outside the box along this coordinate
        prob = np.append(marg[name], max(0.0, 1.0 - marg[name].sum()))
        stat, dof, pval, cells = chi_square_marginal(cnt, prob)
        out[name] = {"chi2": stat, "dof": dof, "p_value": pval, "cells": cells}
        ok &= pval > alpha
    return OracleReport(caps, t, replicas, seed, lost, trunc, int((~inside).sum()), out, bool(ok))
