"""Deterministic large-population limit.

The limit of the renormalized process solves

    ds/dt = lambda0 - mu0 s - lambda1(s, i)
    di/dt = lambda1(s, i) - (mu1 + lambda2) i - lambda3(i, m)

with a transported age density rho_t(a) = b(t - a) for a <= t (empty
initial cohort), boundary density b = lambda2 i + lambda3(i, m) and
m_t = int psi(a) b(t - a) da.  ``solve_limit`` discretizes this with Heun
steps and a trapezoidal convolution; ``solve_limit_exponential_reduction``
uses dm/dt = b - c m instead, which only holds for exponential weights.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import DomainError, Exponential, Indicator, ModelSpec, WeightFunction


class LimitInstabilityError(ArithmeticError):
    """A state went negative beyond the discretization tolerance."""


@dataclass
class LimitSolution:
    """Limit trajectory on the uniform grid ``t`` with step ``h``.

    ``r_mass`` is <r_t, 1>, integrated as its own ODE dr/dt = b so that the
    transport identity <r_t, 1> = int_0^t b du can be checked.
    """

    spec: ModelSpec
    h: float
    t: np.ndarray
    s: np.ndarray
    i: np.ndarray
    b: np.ndarray
    m: np.ndarray
    r_mass: np.ndarray
    s0: float
    i0: float
    method: str = "convolution"

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def at(self, t: float) -> dict:
        """Linear interpolation of all fields at time t."""
        _check_time(self, t)
        return {k: float(np.interp(t, self.t, getattr(self, k)))
                for k in ("s", "i", "b", "m", "r_mass")}

    def pairing(self, f: WeightFunction, t: float | None = None):
        """<r_t, f> = int_0^t f(a) b(t - a) da by the trapezoidal rule.

        Evaluated at every grid point when ``t`` is None.
        """
        if t is not None:
            j = int(round(t / self.h))
            if abs(j * self.h - t) > 1e-9 * max(1.0, abs(t)) or j >= len(self.t):
                raise DomainError("pairing is evaluated on grid times only")
            return float(convolve_boundary(self.b[: j + 1], f, self.h)[-1])
        return convolve_boundary(self.b, f, self.h)

    def mass_defect(self) -> float:
        """max |<r_t,1> - int_0^t b du| over the grid (trapezoid for the integral)."""
        cum = np.concatenate(([0.0], np.cumsum(0.5 * self.h * (self.b[1:] + self.b[:-1]))))
        return float(np.max(np.abs(self.r_mass - cum)))

    def to_csv(self, path_or_file=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "s", "i", "b", "m"])
        for row in zip(self.t, self.s, self.i, self.b, self.m):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path_or_file is not None:
            if hasattr(path_or_file, "write"):
                path_or_file.write(text)
            else:
                with open(path_or_file, "w", newline="") as fh:
                    fh.write(text)
        return text


def read_limit_csv(path) -> dict:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in ("t", "s", "i", "b", "m")}


def quadrature_weights(psi: WeightFunction, h: float, size: int):
    """psi on the age grid h * k, as interior and endpoint trapezoid weights.

    Each trapezoid cell uses the values of psi inside the cell: a node where
    an indicator window closes gets the mean of the one-sided limits when it
    is interior and the left limit when it ends the integration range.  This
    keeps second order for a window ending on a grid node.
    """
    w = np.asarray(psi(h * np.arange(size)), dtype=float) * np.ones(size)
    w_end = w.copy()
    if isinstance(psi, Indicator):
        k = int(round(psi.tau / h))
        if k < size and abs(k * h - psi.tau) <= 1e-9 * psi.tau:
            w[k], w_end[k] = 0.5, 1.0
    return w, w_end


def convolve_boundary(b, psi: WeightFunction, h: float) -> np.ndarray:
    """Trapezoidal m_j = int_0^{t_j} psi(a) b(t_j - a) da for a sampled b."""
    b = np.asarray(b, dtype=float)
    w, w_end = quadrature_weights(psi, h, len(b))
    full = np.convolve(w, b)[: len(b)]
    # trapezoid: halve the two end terms w_0 b_j and w_j b_0
    m = h * (full - 0.5 * w[0] * b - (w - 0.5 * w_end) * b[0])
    m[0] = 0.0
    return m


def evaluate_density(sol: LimitSolution, t: float, a: float) -> float:
    """rho_t(a): b(t - a) for a <= t, 0 for older ages."""
    _check_time(sol, t)
    if a < 0:
        raise DomainError("age must be >= 0")
    if a > t:
        return 0.0
    return float(np.interp(t - a, sol.t, sol.b))


def _check_time(sol, t):
    if t < 0 or t > sol.t[-1] * (1 + 1e-12):
        raise DomainError(f"time {t} outside the solution range [0, {sol.t[-1]}]")


# ---------------------------------------------------------------------------
# scalar rate functions in renormalized units


def _rates(spec: ModelSpec):
    lam0, mu0, mu1, lam2 = spec.lambda0, spec.mu0, spec.mu1, spec.lambda2
    lam1, form = spec.infection.rate, spec.infection.form
    lam3, model = spec.tracing.rate, spec.tracing.model

    def inf(s, i):
        if form == "mass_action":
            return lam1 * s * i
        if form == "frequency":
            return lam1 * s * i / (s + i) if s + i > 0 else 0.0
        return lam1 * i

    def trace(i, m):
        if i <= 0.0:
            return 0.0
        if model == "A":
            return lam3 * m
        if model == "B":
            return lam3 * i * m / (i + m) if i + m > 0 else 0.0
        return lam3 * i * m

    def fs(s, i):
        return lam0 - mu0 * s - inf(s, i)

    def fi(s, i, m):
        return inf(s, i) - (mu1 + lam2) * i - trace(i, m)

    return fs, fi, trace


def _implicit_m(spec: ModelSpec, hist: float, kappa: float, i: float) -> float:
    """Solve m = hist + kappa * (lambda2 i + lambda3(i, m)) for m."""
    lam2, lam3, model = spec.lambda2, spec.tracing.rate, spec.tracing.model
    base = hist + kappa * lam2 * i
    if i <= 0.0 or lam3 == 0.0 or kappa == 0.0:
        return base
    if model in ("A", "C"):
        coef = kappa * lam3 * (1.0 if model == "A" else i)
        if coef >= 1.0:
            raise LimitInstabilityError("step too large for the implicit boundary term; reduce h")
        return base / (1.0 - coef)
    m = base
    for _ in range(50):
        g = m - base - kappa * lam3 * i * m / (i + m)
        dg = 1.0 - kappa * lam3 * i * i / (i + m) ** 2
        step = g / dg
        m -= step
        if abs(step) <= 1e-15 * max(1.0, abs(m)):
            break
    return m


def _grid(T, h):
    if not h > 0 or not T > 0:
        raise ValueError("h and T must be > 0")
    N = int(round(T / h))
    if abs(N * h - T) > 1e-9 * T:
        raise ValueError(f"T/h must be an integer, got {T / h}")
    return N, h * np.arange(N + 1)


def _check_nonneg(h, **arrays):
    tol = -10.0 * h * h
    first = None
    for name, a in arrays.items():
        bad = np.flatnonzero(~(a >= tol))
        if bad.size and (first is None or bad[0] < first[1]):
            first = (name, int(bad[0]), a[bad[0]])
    if first is not None:
        name, k, v = first
        raise LimitInstabilityError(
            f"{name} reached {v:.3e} at grid index {k} (tolerance {tol:.1e}); "
            "reduce the step h, or note that under Model A i can reach 0 in finite time")


def solve_limit(spec: ModelSpec, s0: float, i0: float, T: float, h: float,
                forced_b=None) -> LimitSolution:
    """Heun stepping with a trapezoidal Volterra convolution for m.

    ``forced_b``, if given, is a callable t -> b(t) replacing the boundary
    formula (useful for checking the convolution in isolation).
    """
    N, t = _grid(T, h)
    psi = spec.psi
    fs, fi, trace = _rates(spec)
    w, w_end = quadrature_weights(psi, h, N + 1)
    kappa = 0.5 * h * w[0]
    lam2 = spec.lambda2
    s = np.empty(N + 1)
    i = np.empty(N + 1)
    b = np.empty(N + 1)
    m = np.empty(N + 1)
    r = np.empty(N + 1)
    s[0], i[0], m[0], r[0] = s0, i0, 0.0, 0.0
    b[0] = forced_b(0.0) if forced_b else lam2 * i0 + trace(i0, 0.0)

    def close(j, ij):
        # history part of the trapezoid sum at t_j, excluding the b_j term
        if j == 0:
            return 0.0, b[0]
        hist = h * (np.dot(w[1:j], b[j - 1:0:-1]) + 0.5 * w_end[j] * b[0])
        if forced_b:
            bj = forced_b(t[j])
            return hist + kappa * bj, bj
        mj = _implicit_m(spec, hist, kappa, ij)
        return mj, lam2 * ij + trace(ij, mj)

    with np.errstate(over="ignore", invalid="ignore"):
        _heun_convolution(N, h, s, i, b, m, r, fs, fi, close)
    _check_nonneg(h, s=s, i=i, b=b, m=m)
    return LimitSolution(spec, h, t, _clip(s), _clip(i), _clip(b), _clip(m), r, s0, i0)


def _heun_convolution(N, h, s, i, b, m, r, fs, fi, close):
    for j in range(N):
        ks, ki = fs(s[j], i[j]), fi(s[j], i[j], m[j])
        sp, ip = s[j] + h * ks, i[j] + h * ki
        mp, bp = close(j + 1, ip)
        s[j + 1] = s[j] + 0.5 * h * (ks + fs(sp, ip))
        i[j + 1] = i[j] + 0.5 * h * (ki + fi(sp, ip, mp))
        m[j + 1], b[j + 1] = close(j + 1, i[j + 1])
        r[j + 1] = r[j] + 0.5 * h * (b[j] + bp)


def solve_limit_exponential_reduction(spec: ModelSpec, s0: float, i0: float, T: float,
                                      h: float) -> LimitSolution:
    """Heun stepping of the closed system (s, i, m) for psi(a) = exp(-c a)."""
    if not isinstance(spec.psi, Exponential):
        raise TypeError("the exponential reduction requires an Exponential weight")
    c = spec.psi.c
    N, t = _grid(T, h)
    fs, fi, trace = _rates(spec)
    lam2 = spec.lambda2

    def rhs(y):
        s_, i_, m_, _ = y
        b_ = lam2 * i_ + trace(i_, m_)
        return np.array([fs(s_, i_), fi(s_, i_, m_), b_ - c * m_, b_])

    y = np.empty((N + 1, 4))
    y[0] = (s0, i0, 0.0, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(N):
            k1 = rhs(y[j])
            k2 = rhs(y[j] + h * k1)
            y[j + 1] = y[j] + 0.5 * h * (k1 + k2)
    s, i, m, r = y.T
    b = lam2 * i + np.array([trace(a, x) for a, x in zip(i, m)])
    _check_nonneg(h, s=s, i=i, b=b, m=m)
    return LimitSolution(spec, h, t, _clip(s), _clip(i), _clip(b), _clip(m), r.copy(), s0, i0,
                         method="exponential_reduction")


def _clip(a):
    # values in (-10 h^2, 0) are discretization noise
    return np.maximum(a, 0.0)


def max_difference(a: LimitSolution, b: LimitSolution, fields=("s", "i", "b", "m")) -> float:
    """Max-norm difference on the coarser of the two grids."""
    if a.h < b.h:
        a, b = b, a
    ratio = int(round(a.h / b.h))
    if abs(ratio * b.h - a.h) > 1e-9 * a.h:
        raise ValueError("grids are not nested")
    out = 0.0
    for f in fields:
        out = max(out, float(np.max(np.abs(getattr(a, f) - getattr(b, f)[::ratio]))))
    return out


def convergence_factor(solver, spec, s0, i0, T, h) -> tuple[float, float, float]:
    """Errors at h and h/2 against an h/8 reference, and their ratio."""
    ref = solver(spec, s0, i0, T, h / 8)
    e1 = max_difference(solver(spec, s0, i0, T, h), ref)
    e2 = max_difference(solver(spec, s0, i0, T, h / 2), ref)
    return e1, e2, (e1 / e2 if e2 > 0 else math.inf)
