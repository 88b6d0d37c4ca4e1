"""Gaussian fluctuations around the deterministic limit.

For an exponential weight psi(a) = exp(-c a) the projection
(eta^s, eta^i, <eta^r, psi>) of the fluctuation process is a linear SDE
driven by a Gaussian martingale W, so its covariance solves the
Lyapunov equation dSigma/dt = A Sigma + Sigma A^T + B along the limit
path.  ``clt_experiment`` compares this with sqrt(n)-scaled deviations
of simulated ensembles.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .limit import LimitSolution, solve_limit, solve_limit_exponential_reduction
from .model import Exponential, ModelSpec, WeightFunction
from .simulator import TOTAL_COLUMNS, SimulationConfig, ensemble


# ---------------------------------------------------------------------------
# rates along the limit path


def _tracing_value(spec, i, m):
    v = np.asarray(spec.tracing(i, m), dtype=float)
    return np.where(np.asarray(i) > 0, v, 0.0)


def bracket_rates(sol: LimitSolution, f: WeightFunction | None = None) -> np.ndarray:
    """Instantaneous covariance of (W^s, W^i, W^r(f)) on the solution grid.

    Only f(0) enters; f defaults to the model weight.  Shape (N+1, 3, 3).
    """
    spec = sol.spec
    f0 = float((f if f is not None else spec.psi)(0.0))
    s, i, m = sol.s, sol.i, sol.m
    l1 = np.asarray(spec.infection(s, i), dtype=float) * np.ones_like(s)
    l3 = _tracing_value(spec, i, m)
    det = spec.lambda2 * i + l3
    B = np.zeros((len(s), 3, 3))
    B[:, 0, 0] = spec.lambda0 + spec.mu0 * s + l1
    B[:, 1, 1] = l1 + (spec.mu1 + spec.lambda2) * i + l3
    B[:, 2, 2] = f0 * f0 * det
    B[:, 0, 1] = B[:, 1, 0] = -l1
    B[:, 1, 2] = B[:, 2, 1] = -f0 * det
    return B


def drift_matrix(spec: ModelSpec, s: float, i: float, m: float) -> np.ndarray:
    """Jacobian of (ds, di, dm) / dt in (s, i, m) for an exponential weight."""
    c = _decay(spec)
    dS1, dI1 = spec.infection.partials(s, i)
    dI3, dR3 = spec.tracing.partials(i, m) if i > 0 else (0.0, 0.0)
    mu0, mu1, lam2 = spec.mu0, spec.mu1, spec.lambda2
    return np.array([
        [-mu0 - dS1, -dI1, 0.0],
        [dS1, dI1 - (mu1 + lam2) - dI3, -dR3],
        [0.0, lam2 + dI3, dR3 - c],
    ])


def vector_field(spec: ModelSpec, y) -> np.ndarray:
    """(ds, di, dm) / dt of the closed exponential-weight limit system."""
    s, i, m = (float(v) for v in y)
    c = _decay(spec)
    l1 = float(spec.infection(s, i))
    l3 = float(spec.tracing(i, m)) if i > 0 else 0.0
    return np.array([spec.lambda0 - spec.mu0 * s - l1,
                     l1 - (spec.mu1 + spec.lambda2) * i - l3,
                     spec.lambda2 * i + l3 - c * m])


def drift_matrix_fd(spec: ModelSpec, s: float, i: float, m: float, eps: float = 1e-6):
    """Central finite-difference Jacobian of ``vector_field``."""
    y = np.array([s, i, m], dtype=float)
    J = np.empty((3, 3))
    for k in range(3):
        d = np.zeros(3)
        d[k] = eps * max(1.0, abs(y[k]))
        J[:, k] = (vector_field(spec, y + d) - vector_field(spec, y - d)) / (2 * d[k])
    return J


def _decay(spec):
    if not isinstance(spec.psi, Exponential):
        raise TypeError("the closed covariance system needs an Exponential weight; "
                        "other weights do not reduce to finite dimension")
    return spec.psi.c


@dataclass
class LimitCovariance:
    t: np.ndarray
    sigma: np.ndarray  # (N+1, 3, 3)
    brackets: np.ndarray

    def at(self, t: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.t - t)))
        return self.sigma[j]

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.sigma)))


def covariance_ode(sol: LimitSolution, sigma0=None) -> LimitCovariance:
    """Heun integration of the Lyapunov equation on the solution grid."""
    spec = sol.spec
    _decay(spec)
    N = len(sol.t)
    A = np.array([drift_matrix(spec, s, i, m) for s, i, m in zip(sol.s, sol.i, sol.m)])
    B = bracket_rates(sol)
    S = np.zeros((N, 3, 3))
    S[0] = np.zeros((3, 3)) if sigma0 is None else np.asarray(sigma0, dtype=float)
    h = sol.h

    def rhs(j, X):
        return A[j] @ X + X @ A[j].T + B[j]

    for j in range(N - 1):
        k1 = rhs(j, S[j])
        k2 = rhs(j + 1, S[j] + h * k1)
        S[j + 1] = S[j] + 0.5 * h * (k1 + k2)
        S[j + 1] = 0.5 * (S[j + 1] + S[j + 1].T)
    return LimitCovariance(sol.t.copy(), S, B)


def martingale_bracket(sol: LimitSolution) -> np.ndarray:
    """int_0^t (lambda1 + (mu1 + lambda2) i + lambda3) du on the grid."""
    B = bracket_rates(sol)[:, 1, 1]
    return np.concatenate(([0.0], np.cumsum(0.5 * sol.h * (B[1:] + B[:-1]))))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class FluctuationSample:
    n: int
    grid: np.ndarray
    eta: np.ndarray  # (M, grid, k): s, i, <r,psi>, then <r,f> per test function
    martingales: np.ndarray  # (M, 3): sqrt(n) M^s_T, M^i_T, M^r_T(1)
    labels: tuple

    @property
    def replicas(self):
        return self.eta.shape[0]


def fluctuation_sample(spec: ModelSpec, sol: LimitSolution, n: int, replicas: int, grid,
                       seed: int, test_functions=(), threads: int = 1) -> FluctuationSample:
    """sqrt(n) (x^(n) - x) on ``grid`` from an ensemble started at (n s0, n i0)."""
    grid = np.asarray(grid, dtype=float)
    S0, I0 = n * sol.s0, n * sol.i0
    if abs(S0 - round(S0)) > 1e-9 or abs(I0 - round(I0)) > 1e-9:
        raise ValueError("n * s0 and n * i0 must be integers (no rounding of initial data)")
    sp = spec.with_n(n)
    cfg = SimulationConfig(sp, S0=int(round(S0)), I0=int(round(I0)), horizon=float(grid[-1]),
                           seed=seed)
    ens = ensemble(cfg, replicas, grid, test_functions=test_functions, threads=threads)
    idx = np.rint(grid / sol.h).astype(int)
    if np.any(np.abs(idx * sol.h - grid) > 1e-9):
        raise ValueError("fluctuation grid must lie on the limit grid")
    det = [sol.s[idx], sol.i[idx], sol.m[idx]] + [sol.pairing(f)[idx] for f in test_functions]
    det = np.stack(det, axis=-1)
    x = ens.state / n
    emp = np.concatenate([x[..., [0, 1, 3]], x[..., 4:]], axis=-1)
    eta = math.sqrt(n) * (emp - det)
    col = {c: k for k, c in enumerate(TOTAL_COLUMNS)}
    L = ens.totals[:, [col[f"Lambda{k}"] for k in range(6)]]
    st = ens.state[:, -1]
    Ms = st[:, 0] - S0 - (L[:, 0] - L[:, 1] - L[:, 2])
    Mi = st[:, 1] - I0 - (L[:, 2] - L[:, 3] - L[:, 4] - L[:, 5])
    Mr = st[:, 2] - (L[:, 3] + L[:, 4])
    mart = np.column_stack([Ms, Mi, Mr]) / math.sqrt(n)
    labels = ("s", "i", "r_psi") + tuple(f"r_{f.to_string()}" for f in test_functions)
    return FluctuationSample(n, grid, eta, mart, labels)


def normality_z(x) -> dict:
    """Mean, skewness and kurtosis z-scores of a sample."""
    x = np.asarray(x, dtype=float)
    M = len(x)
    sd = x.std(ddof=1)
    out = {"mean_z": float(x.mean() / (sd / math.sqrt(M))) if sd > 0 else 0.0}
    out["skew_z"] = float(stats.skewtest(x).statistic) if M >= 8 else math.nan
    out["kurtosis_z"] = float(stats.kurtosistest(x).statistic) if M >= 20 else math.nan
    return out


@dataclass
class CLTReport:
    rows: list = field(default_factory=list)
    table: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"scales": self.rows}, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "t", "entry", "empirical", "theoretical"])
        for r in self.table:
            w.writerow([r[0], repr(r[1]), r[2], repr(r[3]),
                        "" if r[4] is None else repr(r[4])])
        return buf.getvalue()


def clt_experiment(spec: ModelSpec, s0: float, i0: float, horizon: float, n_list, replicas: int,
                   seed: int, test_functions=(), h: float = 1e-3, n_grid: int = 11,
                   threads: int = 1) -> CLTReport:
    """Compare sqrt(n)-scaled fluctuations with the limiting covariance."""
    exp_psi = isinstance(spec.psi, Exponential)
    solver = solve_limit_exponential_reduction if exp_psi else solve_limit
    sol = solver(spec, s0, i0, horizon, h)
    coarse = solver(spec, s0, i0, horizon, 2 * h)
    grid = np.linspace(0.0, horizon, n_grid)
    idx = np.rint(grid / h).astype(int)
    cov = covariance_ode(sol) if exp_psi else None
    mb = martingale_bracket(sol)[-1]
    report = CLTReport()
    names = ("s", "i", "r_psi")
    for k, n in enumerate(n_list):
        fs = fluctuation_sample(spec, sol, int(n), replicas, grid, seed + k, test_functions,
                                threads)
        eta_T = fs.eta[:, -1]
        emp_cov = np.cov(eta_T[:, :3].T)
        disc = math.sqrt(n) * max(abs(sol.s[-1] - coarse.s[-1]), abs(sol.i[-1] - coarse.i[-1]),
                                  abs(sol.m[-1] - coarse.m[-1]))
        row = {"n": int(n), "replicas": fs.replicas,
               "discretization_ratio": float(disc / math.sqrt(np.min(np.diag(emp_cov)))),
               "projections": {lab: normality_z(eta_T[:, j]) for j, lab in enumerate(fs.labels)},
               "empirical_variance": [float(v) for v in np.diag(emp_cov)],
               "martingale_variance_i": float(np.var(fs.martingales[:, 1], ddof=1)),
               "martingale_bracket_i": float(mb),
               "martingale_mean_z": [normality_z(fs.martingales[:, j])["mean_z"]
                                     for j in range(3)]}
        if cov is not None:
            th = cov.sigma[-1]
            row["theoretical_variance"] = [float(v) for v in np.diag(th)]
            row["relative_error"] = [float(abs(a / b - 1)) if b > 0 else None
                                     for a, b in zip(np.diag(emp_cov), np.diag(th))]
        report.rows.append(row)
        for g, t in enumerate(grid):
            C = np.cov(fs.eta[:, g, :3].T) if fs.replicas > 1 else np.zeros((3, 3))
            for a in range(3):
                for b in range(a, 3):
                    theo = None if cov is None else float(cov.sigma[idx[g], a, b])
                    report.table.append((int(n), float(t), f"{names[a]}*{names[b]}",
                                         float(C[a, b]), theo))
    return report
