"""Maximum likelihood estimation of the detection rates (lambda2, lambda3).

The other rates are treated as known.  For an observed log the
likelihood only involves the detection events and the path integrals
of the detection hazards:

    l(theta) = sum_{E=3} log(lambda2 i-) + sum_{E=4} log lambda3(i-, x-)
               - n int (lambda2 i + lambda3(i, x)) dt

with i = I/n and x = <R, psi>/n.  For the three tracing models the
hazard is lambda3 * g(i, x), so everything reduces to the counts K3, K4,
J = n int i dt and the model denominator D = int g(i, x) dt.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .limit import LimitSolution
from .model import DomainError, ModelSpec, TracingRate, WeightFunction
from .simulator import (TOTAL_COLUMNS, EventLog, SimulationConfig, Trajectory, ensemble,
                        path_integrals, pre_event_pairings)


class InferenceError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def phi(x):
    """log x + 1/x - 1, nonnegative with a unique zero at x = 1."""
    x = np.asarray(x, dtype=float)
    out = np.log(x) + 1.0 / x - 1.0
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# sufficient statistics


@dataclass(frozen=True)
class DetectionStatistics:
    """Counts and path integrals in count units.

    ``J0`` = int I dt and ``D`` the model denominator times n, so that the
    compensator of the detection events is lambda2 * J0 + lambda3 * D.
    """

    n: int
    model: str
    K3: int
    K4: int
    J0: float
    D: float
    log_const: float  # theta-free part: sum log i- and sum log g(i-, x-)
    integrals: dict = field(default_factory=dict)


_DENOMINATOR_KEY = {"A": "int_rpsi_active", "B": "int_I_rpsi_ratio", "C": "int_I_rpsi"}


def denominator(integrals: dict, model: str, n: int) -> float:
    """n * int g(i, x) dt from count-unit path integrals."""
    v = integrals[_DENOMINATOR_KEY[model]]
    return v / n if model == "C" else v


def detection_statistics(log: EventLog, model: str, psi: WeightFunction | None = None
                         ) -> DetectionStatistics:
    psi = psi if psi is not None else log.psi
    if psi is None:
        raise ValueError("a weight function is required")
    same = log.psi is not None and log.psi == psi
    if isinstance(log, Trajectory) and same and log.integrals:
        integ = dict(log.integrals)
    else:
        integ = path_integrals(log, psi)
    x_pre = log.r_psi_pre if same and np.all(np.isfinite(log.r_psi_pre)) else \
        pre_event_pairings(log, psi)
    e = np.asarray(log.event)
    i_pre = log.I_pre()
    n = log.n
    m3, m4 = e == 3, e == 4
    shape = TracingRate(model, 1.0).shape
    with np.errstate(divide="ignore"):
        const = float(np.sum(np.log(i_pre[m3] / n)))
        g = np.asarray(shape(i_pre[m4] / n, x_pre[m4] / n), dtype=float) * (i_pre[m4] > 0)
        const += float(np.sum(np.log(g)))
    return DetectionStatistics(n, model, int(m3.sum()), int(m4.sum()), integ["int_I"],
                               denominator(integ, model, n), const, integ)


# ---------------------------------------------------------------------------
# parametrizations


class Parametrization:
    """theta -> (lambda2(theta), lambda3(theta)) with derivatives.

    Subclasses give ``rates``, ``jacobian`` (2 x d) and ``hessians``
    (2 x d x d).  The default is the identity theta = (lambda2, lambda3).
    """

    dim = 2

    def rates(self, theta):
        return np.asarray(theta, dtype=float)

    def jacobian(self, theta):
        return np.eye(2)

    def hessians(self, theta):
        return np.zeros((2, 2, 2))

    def admissible(self, theta) -> bool:
        return bool(np.all(self.rates(theta) > 0))


NATURAL = Parametrization()


class QuadraticParametrization(Parametrization):
    """lambda2 = a theta^2, lambda3 = b theta^2 (one parameter, theta > 0)."""

    dim = 1

    def __init__(self, a: float, b: float):
        self.a, self.b = float(a), float(b)

    def rates(self, theta):
        t = float(np.asarray(theta).reshape(-1)[0])
        return np.array([self.a * t * t, self.b * t * t])

    def jacobian(self, theta):
        t = float(np.asarray(theta).reshape(-1)[0])
        return np.array([[2 * self.a * t], [2 * self.b * t]])

    def hessians(self, theta):
        return np.array([[[2 * self.a]], [[2 * self.b]]])

    def admissible(self, theta):
        return float(np.asarray(theta).reshape(-1)[0]) > 0

    def stationary_point(self, st: DetectionStatistics) -> float:
        # (K3 + K4) * 2/theta = 2 theta (a J0 + b D)
        return math.sqrt((st.K3 + st.K4) / (self.a * st.J0 + self.b * st.D))


# ---------------------------------------------------------------------------
# likelihood


def _loglik(st: DetectionStatistics, lam2: float, lam3: float) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = st.log_const - lam2 * st.J0 - lam3 * st.D
        if st.K3:
            terms += st.K3 * math.log(lam2) if lam2 > 0 else -math.inf
        if st.K4:
            terms += st.K4 * math.log(lam3) if lam3 > 0 else -math.inf
    return float(terms)


def log_likelihood(log: EventLog, theta, model: str, psi: WeightFunction | None = None,
                   parametrization: Parametrization = NATURAL) -> float:
    """Log-likelihood of the detection events, theta-free terms included.

    Returns -inf (with a warning) if an observed event has zero hazard.
    """
    st = detection_statistics(log, model, psi)
    return likelihood_from_statistics(st, theta, parametrization)


def likelihood_from_statistics(st: DetectionStatistics, theta,
                               parametrization: Parametrization = NATURAL) -> float:
    lam2, lam3 = parametrization.rates(theta)
    if not math.isfinite(st.log_const):
        warnings.warn("an observed detection has zero hazard (e.g. traced detection "
                      "with an empty cohort under Model A)", RuntimeWarning, stacklevel=2)
        return -math.inf
    return _loglik(st, lam2, lam3)


def score_and_hessian(st: DetectionStatistics, theta, parametrization=NATURAL):
    lam = parametrization.rates(theta)
    Jac = parametrization.jacobian(theta)
    H = parametrization.hessians(theta)
    K = np.array([st.K3, st.K4], dtype=float)
    comp = np.array([st.J0, st.D])
    coef = K / lam - comp  # d l / d lambda
    score = Jac.T @ coef
    hess = np.einsum("k,kij->ij", coef, H) - Jac.T @ np.diag(K / lam ** 2) @ Jac
    return score, hess


# ---------------------------------------------------------------------------
# fits


@dataclass
class FitResult:
    theta: np.ndarray
    model: str
    fisher: np.ndarray  # per unit n
    std: np.ndarray
    loglik: float
    K3: int
    K4: int
    integrals: dict
    n: int
    degenerate: tuple = (False, False)
    iterations: int = 0
    converged: bool = True
    hessian_warning: bool = False
    method: str = "closed_form"

    @property
    def lambda2(self) -> float:
        return float(self.theta[0])

    @property
    def lambda3(self) -> float:
        return float(self.theta[1])

    def confidence_interval(self, level: float = 0.95):
        from scipy.stats import norm

        z = norm.ppf(0.5 + level / 2)
        return np.column_stack([self.theta - z * self.std, self.theta + z * self.std])

    def to_dict(self) -> dict:
        return {
            "model": self.model, "method": self.method, "n": self.n,
            "lambda2": _j(self.theta[0]), "lambda3": _j(self.theta[1]),
            "std_lambda2": _j(self.std[0]), "std_lambda3": _j(self.std[1]),
            "fisher": [[_j(v) for v in row] for row in self.fisher],
            "loglik": _j(self.loglik), "K3": self.K3, "K4": self.K4,
            "integrals": {k: _j(v) for k, v in sorted(self.integrals.items())},
            "degenerate": list(self.degenerate), "iterations": self.iterations,
            "converged": self.converged,
        }


def _j(v):
    v = float(v)
    return v if math.isfinite(v) else None


def closed_form_from_statistics(st: DetectionStatistics) -> FitResult:
    if st.K4 > 0 and st.D <= 0:
        raise InferenceError("traced detections observed but the tracing denominator is 0")
    if st.K3 > 0 and st.J0 <= 0:
        raise InferenceError("spontaneous detections observed but int I dt is 0")
    lam2 = st.K3 / st.J0 if st.K3 else 0.0
    lam3 = st.K4 / st.D if st.K4 else 0.0
    n = st.n
    with np.errstate(divide="ignore", invalid="ignore"):
        fisher = np.diag([st.J0 / n / lam2 if lam2 > 0 else math.inf,
                          st.D / n / lam3 if lam3 > 0 else math.inf])
        std = np.sqrt(1.0 / (n * np.diag(fisher)))
    std = np.where(np.array([st.K3, st.K4]) > 0, std, np.nan)
    return FitResult(np.array([lam2, lam3]), st.model, fisher, std,
                     _loglik(st, lam2, lam3), st.K3, st.K4, dict(st.integrals), n,
                     degenerate=(st.K3 == 0, st.K4 == 0))


def fit_closed_form(log: EventLog, model: str, psi: WeightFunction | None = None) -> FitResult:
    """lambda2 = K3 / J0 and lambda3 = K4 / D with diagonal Fisher information.

    A zero count gives the boundary estimate 0 with the ``degenerate``
    flag set.
    """
    return closed_form_from_statistics(detection_statistics(log, model, psi))


def fit_numeric(log_or_stats, model: str | None = None, psi: WeightFunction | None = None,
                theta_init=None, parametrization: Parametrization = NATURAL,
                max_iter: int = 200) -> FitResult:
    """Newton ascent on the analytic score and Hessian, with step halving.

    Converged when |score| < 1e-10 (1 + |l|).  Standard deviations come
    from the observed information.
    """
    if isinstance(log_or_stats, DetectionStatistics):
        st = log_or_stats
    else:
        st = detection_statistics(log_or_stats, model, psi)
    if theta_init is None:
        theta_init = np.ones(parametrization.dim)
    theta = np.asarray(theta_init, dtype=float).reshape(-1).copy()
    if not parametrization.admissible(theta):
        raise DomainError("theta_init is not admissible")
    ll = likelihood_from_statistics(st, theta, parametrization)
    trace = [(theta.copy(), ll)]
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        g, H = score_and_hessian(st, theta, parametrization)
        if np.linalg.norm(g) < 1e-10 * (1 + abs(ll)):
            converged = True
            it -= 1
            break
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        if g @ step <= 0:  # not an ascent direction
            step = g
        a = 1.0
        while a > 1e-30:
            cand = theta + a * step
            if parametrization.admissible(cand):
                lc = likelihood_from_statistics(st, cand, parametrization)
                if lc >= ll - 1e-12 * abs(ll):
                    break
            a *= 0.5
        else:
            raise ConvergenceError("step halving failed", trace)
        theta, ll = cand, lc
        trace.append((theta.copy(), ll))
    if not converged:
        g, _ = score_and_hessian(st, theta, parametrization)
        if np.linalg.norm(g) < 1e-10 * (1 + abs(ll)):
            converged = True
        else:
            raise ConvergenceError(f"no convergence after {max_iter} iterations", trace)
    _, H = score_and_hessian(st, theta, parametrization)
    obs = -H
    eig = np.linalg.eigvalsh(obs)
    hess_warn = bool(np.min(eig) <= 0)
    if hess_warn:
        warnings.warn("observed information is not positive definite at the optimum",
                      RuntimeWarning, stacklevel=2)
    with np.errstate(invalid="ignore"):
        std = np.sqrt(np.diag(np.linalg.pinv(obs)))
    return FitResult(theta, st.model, obs / st.n, std, ll, st.K3, st.K4, dict(st.integrals),
                     st.n, iterations=it, converged=converged, hessian_warning=hess_warn,
                     method="newton")


# ---------------------------------------------------------------------------
# limit quantities


def _trapz(y, h):
    return float(h * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def _limit_shape(limit: LimitSolution, model: str):
    g = np.asarray(TracingRate(model, 1.0).shape(limit.i, limit.m), dtype=float)
    return np.where(limit.i > 0, g, 0.0)


def contrast(theta, theta_star, limit: LimitSolution, model: str) -> float:
    """K(theta, theta*) = int lambda2* i Phi(lambda2*/lambda2)
    + int lambda3*(i, m) Phi(lambda3*(i, m)/lambda3(i, m)) along the limit."""
    lam2, lam3 = (float(v) for v in theta)
    s2, s3 = (float(v) for v in theta_star)
    if min(lam2, lam3, s2, s3) <= 0:
        raise DomainError("rates must be positive")
    g = _limit_shape(limit, model)
    k2 = _trapz(s2 * limit.i, limit.h) * phi(s2 / lam2)
    k3 = _trapz(s3 * g, limit.h) * phi(s3 / lam3)
    return k2 + k3


def fisher_information(theta_star, limit: LimitSolution, model: str,
                       parametrization: Parametrization = NATURAL) -> np.ndarray:
    """Fisher information per unit n along the limit path.

    At theta* only the outer-product terms survive:
    int (grad lambda2)(grad lambda2)^T i / lambda2 + (grad lambda3)(grad lambda3)^T g / lambda3.
    """
    lam = parametrization.rates(theta_star)
    Jac = parametrization.jacobian(theta_star)
    a2 = _trapz(limit.i, limit.h) / lam[0]
    a3 = _trapz(_limit_shape(limit, model), limit.h) / lam[1]
    return a2 * np.outer(Jac[0], Jac[0]) + a3 * np.outer(Jac[1], Jac[1])


# ---------------------------------------------------------------------------
# experiments


def estimates_from_totals(totals: np.ndarray, model: str, n: int):
    """Vectorized closed-form fits from ensemble totals rows.

    Returns (theta_hat[M, 2], std[M, 2], valid[M]).
    """
    col = {c: k for k, c in enumerate(TOTAL_COLUMNS)}
    K3 = totals[:, col["N3"]]
    K4 = totals[:, col["N4"]]
    J0 = totals[:, col["int_I"]]
    D = totals[:, col[_DENOMINATOR_KEY[model]]]
    if model == "C":
        D = D / n
    valid = (K3 > 0) & (K4 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.column_stack([K3 / J0, K4 / D])
        # sqrt((I^-1)_jj / n) with I_jj = (J / n) / lambda = K / (n lambda^2)
        std = th / np.sqrt(np.column_stack([K3, K4]))
    return th, std, valid


@dataclass
class ConsistencyRow:
    n: int
    replicas: int
    excluded: int
    mean: np.ndarray
    bias_z: np.ndarray
    rmse: np.ndarray
    coverage: np.ndarray
    z_mean: np.ndarray
    z_var: np.ndarray
    mean_counts: np.ndarray


def consistency_experiment(spec: ModelSpec, s0: float, i0: float, horizon: float,
                           n_list, replicas: int, seed: int, threads: int = 1) -> list:
    """Closed-form fits over independent replicas at each scale n.

    Coverage uses theta_hat +/- 1.96 std with the plug-in standard
    deviations; replicas with a zero detection count are excluded.
    """
    theta_star = np.array([spec.lambda2, spec.lambda3])
    rows = []
    for k, n in enumerate(n_list):
        sp = spec.with_n(int(n))
        cfg = SimulationConfig(sp, S0=int(round(n * s0)), I0=int(round(n * i0)),
                               horizon=horizon, seed=seed + k)
        ens = ensemble(cfg, replicas, [horizon], threads=threads)
        th, sd, ok = estimates_from_totals(ens.totals, spec.tracing.model, int(n))
        th, sd = th[ok], sd[ok]
        M = len(th)
        err = th - theta_star
        z = err / sd
        cover = np.mean(np.abs(z) <= 1.959963984540054, axis=0)
        mean = th.mean(axis=0)
        se = th.std(axis=0, ddof=1) / math.sqrt(M)
        cnt = ens.totals[ok][:, [TOTAL_COLUMNS.index("N3"), TOTAL_COLUMNS.index("N4")]]
        rows.append(ConsistencyRow(int(n), M, int((~ok).sum()), mean, (mean - theta_star) / se,
                                   np.sqrt(np.mean(err ** 2, axis=0)), cover,
                                   z.mean(axis=0), z.var(axis=0, ddof=1), cnt.mean(axis=0)))
    return rows


def rmse_slope(rows) -> np.ndarray:
    """Least-squares slope of log RMSE against log n, per component."""
    x = np.log([r.n for r in rows])
    y = np.log(np.array([r.rmse for r in rows]))
    return np.polyfit(x, y, 1)[0]
