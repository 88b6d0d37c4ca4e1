"""Stochastic SIR epidemics with contact tracing of recently detected cases.

Exact jump-process simulation, the deterministic large-population limit,
Gaussian fluctuations around it, and maximum likelihood estimation of the
detection rates.
"""
from .model import (
    EVENT_NAMES,
    AgedCohort,
    Constant,
    DomainError,
    EpidemicState,
    Exponential,
    GammaDensity,
    Indicator,
    InfectionRate,
    ModelSpec,
    TracingRate,
    WeightFunction,
    cohort_pairing,
    event_rates,
    evaluate_weight,
    parse_weight,
)
from .simulator import (
    Ensemble,
    EventLog,
    SimulationConfig,
    SimulationError,
    Trajectory,
    ensemble,
    path_integrals,
    read_event_log,
    replica_seeds,
    simulate,
    write_event_log,
)

__version__ = "0.1.0"
