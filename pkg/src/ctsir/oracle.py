"""Exact transient laws for constant weights, by uniformization.

With psi constant, <R, psi> = level * R-count, so (S, I, R-count) is a
finite-dimensional Markov chain.  Truncating it to a box and routing
transitions that leave the box to an absorbing "lost" state gives a
finite generator whose transient distribution is computed as a Poisson
mixture of powers of the uniformized jump matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats

from .model import Constant, DomainError, ModelSpec


class CapsTooSmall(DomainError):
    """Probability mass leaving the truncation box exceeds the tolerance."""


@dataclass
class TruncatedChain:
    spec: ModelSpec
    caps: tuple[int, int, int]
    Q: sparse.csr_matrix  # (N + 1) x (N + 1), last index is the lost state
    exit_rates: np.ndarray
    uniformization: float

    @property
    def n_states(self) -> int:
        return self.Q.shape[0] - 1

    def index(self, S: int, I: int, R: int) -> int:
        Sm, Im, Rm = self.caps
        if not (0 <= S <= Sm and 0 <= I <= Im and 0 <= R <= Rm):
            raise DomainError(f"state {(S, I, R)} outside caps {self.caps}")
        return (S * (Im + 1) + I) * (Rm + 1) + R

    def states(self) -> np.ndarray:
        Sm, Im, Rm = self.caps
        g = np.indices((Sm + 1, Im + 1, Rm + 1)).reshape(3, -1).T
        return g


def build_chain(spec: ModelSpec, caps, uniformization: float | None = None) -> TruncatedChain:
    """Generator of the truncated (S, I, R-count) chain for a constant weight."""
    if not isinstance(spec.psi, Constant):
        raise DomainError("the oracle requires a constant weight function")
    Sm, Im, Rm = (int(c) for c in caps)
    n = spec.n
    g = np.indices((Sm + 1, Im + 1, Rm + 1)).reshape(3, -1).T.astype(float)
    S, I, R = g[:, 0], g[:, 1], g[:, 2]
    X = spec.psi.level * R
    N = len(S)
    rate = np.empty((6, N))
    rate[0] = n * spec.lambda0
    rate[1] = spec.mu0 * S
    rate[2] = n * np.asarray(spec.infection(S / n, I / n)) * np.ones(N)
    rate[3] = spec.lambda2 * I
    rate[4] = np.where(I > 0, n * np.asarray(spec.tracing(I / n, X / n)) * np.ones(N), 0.0)
    rate[5] = spec.mu1 * I
    moves = np.array([[1, 0, 0], [-1, 0, 0], [-1, 1, 0], [0, -1, 1], [0, -1, 1], [0, -1, 0]])
    src = np.arange(N)
    rows, cols, vals = [], [], []
    for e in range(6):
        r = rate[e]
        live = r > 0
        dst = g + moves[e]
        inside = ((dst[:, 0] <= Sm) & (dst[:, 1] <= Im) & (dst[:, 2] <= Rm)
                  & (dst >= 0).all(axis=1))
        d = ((dst[:, 0] * (Im + 1) + dst[:, 1]) * (Rm + 1) + dst[:, 2]).astype(np.int64)
        d = np.where(inside, d, N)
        rows.append(src[live])
        cols.append(d[live])
        vals.append(r[live])
    total = rate.sum(axis=0)
    rows.append(src)
    cols.append(src)
    vals.append(-total)
    Q = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(N + 1, N + 1)).tocsr()
    lam = float(total.max()) * 1.02 + 1e-12 if uniformization is None else float(uniformization)
    if lam < total.max():
        raise DomainError("uniformization constant below the maximal exit rate")
    return TruncatedChain(spec, (Sm, Im, Rm), Q, total, lam)


def transient_distribution(chain: TruncatedChain, initial, t: float, eps: float = 1e-10):
    """P(X_t = x) over the truncated states, and the mass lost to the caps.

    Returns (p, lost, truncation) where ``p`` has one entry per state,
    ``lost`` is the probability of having left the box by time t and
    ``truncation`` bounds the neglected Poisson tail.
    """
    if not (0 < eps <= 1e-6):
        raise DomainError("eps must lie in (0, 1e-6]")
    if t < 0:
        raise DomainError("t must be >= 0")
    N = chain.n_states
    p = np.zeros(N + 1)
    p[chain.index(*initial)] = 1.0
    if t == 0:
        return p[:N], 0.0, 0.0
    lam = chain.uniformization
    P = (sparse.identity(N + 1, format="csr") + chain.Q / lam).T.tocsr()
    mu = lam * t
    kmax = int(stats.poisson.isf(eps, mu)) + 1
    while stats.poisson.sf(kmax, mu) >= eps:
        kmax += 1
    w = stats.poisson.pmf(np.arange(kmax + 1), mu)
    out = np.zeros(N + 1)
    v = p
    for k in range(kmax + 1):
        out += w[k] * v
        v = P @ v
    truncation = float(stats.poisson.sf(kmax, mu))
    lost = float(out[N])
    if lost >= eps:
        raise CapsTooSmall(
            f"mass {lost:.2e} left the caps {chain.caps}; try "
            f"{tuple(2 * c for c in chain.caps)}")
    return np.maximum(out[:N], 0.0), lost, truncation


def marginals(chain: TruncatedChain, p: np.ndarray) -> dict:
    Sm, Im, Rm = chain.caps
    cube = p.reshape(Sm + 1, Im + 1, Rm + 1)
    return {"S": cube.sum(axis=(1, 2)), "I": cube.sum(axis=(0, 2)), "R": cube.sum(axis=(0, 1))}


def default_caps(spec: ModelSpec, S0: int, I0: int, t: float) -> tuple[int, int, int]:
    """Pessimistic caps: mean + 10 standard deviations of crude upper bounds.

    S never exceeds S0 plus the recruitments, a Poisson(n lambda0 t)
    variable, and I and R-count never exceed I0 plus S's bound.
    """
    a = spec.n * spec.lambda0 * t
    s_cap = int(math.ceil(S0 + a + 10 * math.sqrt(a) + 10))
    return s_cap, I0 + s_cap, I0 + s_cap


def stationary_susceptibles(lambda0: float, mu0: float, k_max: int | None = None) -> np.ndarray:
    """Poisson(lambda0 / mu0) probabilities on {0, ..., k_max}."""
    if not mu0 > 0:
        raise DomainError("mu0 must be > 0")
    a = lambda0 / mu0
    if k_max is None:
        k_max = int(math.ceil(a + 10 * math.sqrt(a) + 10))
    return stats.poisson.pmf(np.arange(k_max + 1), a)


def balance_residuals(p: np.ndarray, lambda0: float, mu0: float) -> np.ndarray:
    """Stationary balance of the immigration-death chain, one entry per k.

    k = 0: -lambda0 p_0 + mu0 p_1; k >= 1:
    lambda0 p_{k-1} - lambda0 p_k + mu0 (k+1) p_{k+1} - mu0 k p_k.
    """
    p = np.asarray(p, dtype=float)
    k = np.arange(len(p) - 1)
    prev = np.concatenate(([0.0], p[:-2]))
    return lambda0 * prev - lambda0 * p[:-1] + mu0 * (k + 1) * p[1:] - mu0 * k * p[:-1]


def pure_death_extinction(I0: int, rate: float, t: float) -> float:
    """P(I_t = 0) when each of I0 infectives leaves independently at ``rate``."""
    return (1.0 - math.exp(-rate * t)) ** I0


def chi_square_marginal(counts, probs, min_expected: float = 5.0):
    """Pearson test of observed counts against probabilities.

    Adjacent cells are pooled from the tail until each expected count is at
    least ``min_expected``.  Returns (statistic, dof, p_value, cells).
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    M = counts.sum()
    probs = probs / probs.sum()
    exp_, obs = [], []
    ce = co = 0.0
    for e, o in zip(M * probs, counts):
        ce += e
        co += o
        if ce >= min_expected:
            exp_.append(ce)
            obs.append(co)
            ce = co = 0.0
    if ce > 0 or co > 0:
        if exp_:
            exp_[-1] += ce
            obs[-1] += co
        else:
            exp_.append(ce)
            obs.append(co)
    exp_, obs = np.array(exp_), np.array(obs)
    stat = float(np.sum((obs - exp_) ** 2 / exp_))
    dof = len(exp_) - 1
    pval = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return stat, dof, pval, len(exp_)
