"""Domain types: weight functions, rate forms, model parameters and the aged cohort.

Counts are integers, rates and times are binary64.  The renormalized
process of scale ``n`` uses the jump rates

    E=0  n * lambda0
    E=1  mu0 * S
    E=2  n * lambda1(S/n, I/n)
    E=3  lambda2 * I
    E=4  n * lambda3(I/n, <R, psi>/n)
    E=5  mu1 * I
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np

EVENT_NAMES = (
    "recruitment",
    "susceptible_exit",
    "infection",
    "spontaneous_detection",
    "traced_detection",
    "infective_exit",
)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


# ---------------------------------------------------------------------------
# weight functions

# integer codes shared with the compiled simulation kernel
PSI_CONSTANT, PSI_INDICATOR, PSI_EXPONENTIAL, PSI_GAMMA = 0, 1, 2, 3


class WeightFunction:
    """Base class for the bounded, nonnegative detection-age weights."""

    kind: int

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if np.any(a < 0):
            raise DomainError("weight functions are defined for ages a >= 0")
        out = self._eval(a)
        return float(out) if out.ndim == 0 else out

    def _eval(self, a):
        raise NotImplementedError

    @property
    def sup(self) -> float:
        raise NotImplementedError

    @property
    def nonincreasing(self) -> bool:
        return True

    def params(self) -> tuple[float, float]:
        raise NotImplementedError

    def to_string(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Indicator(WeightFunction):
    """psi(a) = 1 on the closed window [0, tau], 0 afterwards."""

    tau: float
    kind = PSI_INDICATOR

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"Indicator window must be > 0, got {self.tau}")

    def _eval(self, a):
        return np.where(a <= self.tau, 1.0, 0.0)

    @property
    def sup(self):
        return 1.0

    def params(self):
        return (float(self.tau), 0.0)

    def to_string(self):
        return f"ind:{self.tau!r}"


@dataclass(frozen=True)
class Exponential(WeightFunction):
    """psi(a) = exp(-c a)."""

    c: float
    kind = PSI_EXPONENTIAL

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"Exponential decay rate must be > 0, got {self.c}")

    def _eval(self, a):
        return np.exp(-self.c * a)

    @property
    def sup(self):
        return 1.0

    def params(self):
        return (float(self.c), 0.0)

    def to_string(self):
        return f"exp:{self.c!r}"


@dataclass(frozen=True)
class GammaDensity(WeightFunction):
    """Normalized gamma density with shape k >= 1 and scale theta.

    Shapes below 1 give an unbounded density at a = 0 and are rejected.
    For k > 1 the weight first increases, so it is not nonincreasing.
    """

    shape: float
    scale: float
    kind = PSI_GAMMA

    def __post_init__(self):
        if not (self.shape >= 1 and math.isfinite(self.shape)):
            raise ValueError(f"gamma shape must be >= 1 for a bounded weight, got {self.shape}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"gamma scale must be > 0, got {self.scale}")

    def _log_norm(self):
        return math.lgamma(self.shape) + self.shape * math.log(self.scale)

    def _eval(self, a):
        k, th = self.shape, self.scale
        if k == 1:
            return np.exp(-a / th) / th
        with np.errstate(divide="ignore"):
            logv = (k - 1) * np.log(a) - a / th - self._log_norm()
        return np.where(a > 0, np.exp(logv), 0.0)

    @property
    def mode(self):
        return (self.shape - 1) * self.scale

    @property
    def sup(self):
        return float(self._eval(np.asarray(self.mode)))

    @property
    def nonincreasing(self):
        return self.shape <= 1

    def params(self):
        return (float(self.shape), float(self.scale))

    def to_string(self):
        return f"gamma:{self.shape!r},{self.scale!r}"


@dataclass(frozen=True)
class Constant(WeightFunction):
    """psi(a) = level; with level 1 the pairing counts the whole cohort."""

    level: float = 1.0
    kind = PSI_CONSTANT

    def __post_init__(self):
        if not (self.level >= 0 and math.isfinite(self.level)):
            raise ValueError(f"Constant level must be >= 0, got {self.level}")

    def _eval(self, a):
        return np.full_like(a, self.level, dtype=float)

    @property
    def sup(self):
        return float(self.level)

    def params(self):
        return (float(self.level), 0.0)

    def to_string(self):
        return f"const:{self.level!r}"


def parse_weight(text: str) -> WeightFunction:
    """Parse ``ind:4``, ``exp:0.01``, ``gamma:2,1.5`` or ``const:1``."""
    try:
        name, _, args = text.strip().partition(":")
        vals = [float(v) for v in args.split(",")] if args else []
        name = name.lower()
        if name in ("ind", "indicator"):
            return Indicator(*vals)
        if name in ("exp", "exponential"):
            return Exponential(*vals)
        if name == "gamma":
            return GammaDensity(*vals)
        if name in ("const", "constant"):
            return Constant(*vals)
    except TypeError as exc:
        raise ValueError(f"bad weight function {text!r}: {exc}") from None
    raise ValueError(f"unknown weight function {text!r}")


def evaluate_weight(psi: WeightFunction, a: float) -> float:
    if a < 0:
        raise DomainError(f"negative age {a}")
    return psi(a)


# ---------------------------------------------------------------------------
# rate forms

INF_MASS_ACTION, INF_FREQUENCY, INF_INFECTIVE = 0, 1, 2
TRACE_A, TRACE_B, TRACE_C = 0, 1, 2

_INFECTION_FORMS = {"mass_action": INF_MASS_ACTION, "frequency": INF_FREQUENCY,
                    "infective": INF_INFECTIVE}
_TRACING_MODELS = {"A": TRACE_A, "B": TRACE_B, "C": TRACE_C}


@dataclass(frozen=True)
class InfectionRate:
    """Infection jump rate lambda1(S, I).

    ``mass_action``: rate * S * I, ``frequency``: rate * S * I / (S + I),
    ``infective``: rate * I.
    """

    form: str
    rate: float

    def __post_init__(self):
        if self.form not in _INFECTION_FORMS:
            raise ValueError(f"unknown infection form {self.form!r}")
        _check_rate("lambda1", self.rate)

    @property
    def code(self):
        return _INFECTION_FORMS[self.form]

    def __call__(self, s, i):
        s, i = np.asarray(s, dtype=float), np.asarray(i, dtype=float)
        if self.form == "mass_action":
            out = self.rate * s * i
        elif self.form == "frequency":
            tot = s + i
            out = np.where(tot > 0, self.rate * s * i / np.where(tot > 0, tot, 1.0), 0.0)
        else:
            out = self.rate * i
        return _scalar(out)

    def partials(self, s, i):
        """(d/dS, d/dI) of the rate function."""
        s, i = np.asarray(s, dtype=float), np.asarray(i, dtype=float)
        lam = self.rate
        if self.form == "mass_action":
            return _scalar(lam * i), _scalar(lam * s)
        if self.form == "frequency":
            tot2 = np.where(s + i > 0, (s + i) ** 2, 1.0)
            return _scalar(lam * i * i / tot2), _scalar(lam * s * s / tot2)
        return _scalar(np.zeros_like(s)), _scalar(np.full_like(i, lam))

    @property
    def h1_bound(self):
        """Constant L with rate(x, y) <= L * x * y on the whole quadrant, or None.

        Only mass action is dominated everywhere; frequency dependence is
        dominated by rate * x * y where x + y >= 1 and the infective-only form
        is not dominated near x = 0.
        """
        return self.rate if self.form == "mass_action" else None


@dataclass(frozen=True)
class TracingRate:
    """Contact-tracing jump rate lambda3(i, <r, psi>).

    Model A: rate * x, Model B: rate * i * x / (i + x), Model C: rate * i * x,
    with x the cohort pairing.
    """

    model: str
    rate: float

    def __post_init__(self):
        if self.model not in _TRACING_MODELS:
            raise ValueError(f"unknown tracing model {self.model!r}")
        _check_rate("lambda3", self.rate)

    @property
    def code(self):
        return _TRACING_MODELS[self.model]

    def shape(self, i, x):
        """The rate divided by its coefficient: the factor multiplying lambda3."""
        i, x = np.asarray(i, dtype=float), np.asarray(x, dtype=float)
        if self.model == "A":
            out = x * 1.0
        elif self.model == "B":
            tot = i + x
            out = np.where(tot > 0, i * x / np.where(tot > 0, tot, 1.0), 0.0)
        else:
            out = i * x
        return _scalar(out)

    def __call__(self, i, x):
        return _scalar(self.rate * np.asarray(self.shape(i, x)))

    def partials(self, i, x):
        """(d/dI, d/dR) of the rate function."""
        i, x = np.asarray(i, dtype=float), np.asarray(x, dtype=float)
        lam = self.rate
        if self.model == "A":
            return _scalar(np.zeros_like(i + x)), _scalar(np.full_like(i + x, lam))
        if self.model == "B":
            tot2 = np.where(i + x > 0, (i + x) ** 2, 1.0)
            return _scalar(lam * x * x / tot2), _scalar(lam * i * i / tot2)
        return _scalar(lam * x), _scalar(lam * i)

    @property
    def h1_bound(self):
        return self.rate if self.model == "C" else None


def _check_rate(name, value):
    if not (value >= 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be finite and >= 0, got {value}")


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class ModelSpec:
    lambda0: float
    mu0: float
    mu1: float
    lambda2: float
    infection: InfectionRate
    tracing: TracingRate
    psi: WeightFunction
    n: int = 1
    time_unit: str = "days"

    def __post_init__(self):
        for name in ("lambda0", "mu0", "mu1", "lambda2"):
            _check_rate(name, getattr(self, name))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"scale n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def lambda1(self):
        return self.infection.rate

    @property
    def lambda3(self):
        return self.tracing.rate

    def with_n(self, n: int) -> "ModelSpec":
        return replace(self, n=n)

    def with_detection(self, lambda2: float, lambda3: float) -> "ModelSpec":
        return replace(self, lambda2=lambda2, tracing=replace(self.tracing, rate=lambda3))

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0, "mu0": self.mu0, "mu1": self.mu1,
            "lambda1": self.infection.rate, "infection": self.infection.form,
            "lambda2": self.lambda2, "lambda3": self.tracing.rate,
            "tracing": self.tracing.model, "psi": self.psi.to_string(),
            "n": self.n, "time_unit": self.time_unit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            lambda0=float(d["lambda0"]), mu0=float(d["mu0"]), mu1=float(d["mu1"]),
            lambda2=float(d["lambda2"]),
            infection=InfectionRate(d["infection"], float(d["lambda1"])),
            tracing=TracingRate(d["tracing"], float(d["lambda3"])),
            psi=parse_weight(d["psi"]), n=int(d.get("n", 1)),
            time_unit=d.get("time_unit", "days"),
        )


# ---------------------------------------------------------------------------
# cohort and state


class AgedCohort:
    """Removed individuals stored by absolute detection time.

    Ages are never stored: the pairing at time t is the sum of
    psi(t - d) over detection times d, so aging is exact.
    """

    def __init__(self, times=()):
        self._times: list[float] = []
        for t in times:
            self.insert(t)

    def insert(self, t: float) -> None:
        if self._times and t < self._times[-1]:
            raise DomainError(f"detection time {t} precedes {self._times[-1]}")
        self._times.append(float(t))

    @property
    def count(self) -> int:
        return len(self._times)

    def __len__(self):
        return len(self._times)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times, dtype=float)

    def pairing(self, psi: WeightFunction, t: float) -> float:
        if not self._times:
            return 0.0
        if self._times[-1] > t:
            raise DomainError(f"cohort holds detection time {self._times[-1]} after t={t}")
        ages = t - self.times
        return float(np.sum(psi(ages)))

    def count_within(self, t: float, window: float) -> int:
        """Number of detections with age in [0, window] at time t."""
        lo = bisect.bisect_left(self._times, t - window)
        hi = bisect.bisect_right(self._times, t)
        return hi - lo


def cohort_pairing(R: AgedCohort, psi: WeightFunction, t: float) -> float:
    return R.pairing(psi, t)


@dataclass
class EpidemicState:
    t: float
    S: int
    I: int
    R: AgedCohort = field(default_factory=AgedCohort)

    def __post_init__(self):
        if self.t < 0 or self.S < 0 or self.I < 0:
            raise DomainError("time and counts must be nonnegative")


def event_rates(state: EpidemicState, spec: ModelSpec) -> np.ndarray:
    """The six jump rates of the renormalized process, indexed by event type.

    The contact-tracing rate is set to 0 when no infective is present,
    since event 4 removes an infective (relevant for Model A only).
    """
    n = spec.n
    S, I = state.S, state.I
    x = state.R.pairing(spec.psi, state.t)
    rates = np.empty(6)
    rates[0] = n * spec.lambda0
    rates[1] = spec.mu0 * S
    rates[2] = n * spec.infection(S / n, I / n)
    rates[3] = spec.lambda2 * I
    rates[4] = n * spec.tracing(I / n, x / n) if I > 0 else 0.0
    rates[5] = spec.mu1 * I
    return rates

