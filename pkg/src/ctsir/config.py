"""Flat ``key = value`` run configuration.

Lines starting with ``#`` and trailing ``# ...`` comments are ignored.
Every key must be one of ``KEYS``; values are parsed by the declared type
and written back with ``repr`` so a round trip is lossless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .model import InfectionRate, ModelSpec, TracingRate, parse_weight


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(float(v)) for v in text.split(",") if v.strip())


def _strs(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


@dataclass
class RunConfig:
    # model
    lambda0: float = 0.0
    mu0: float = 0.0
    mu1: float = 0.0
    lambda1: float = 0.0
    infection: str = "mass_action"
    lambda2: float = 0.0
    lambda3: float = 0.0
    tracing: str = "C"
    psi: str = "const:1.0"
    n: int = 1
    time_unit: str = "days"
    # simulation
    S0: int = 0
    I0: int = 0
    horizon: float = 1.0
    seed: int = 0
    stop: str = "time"
    max_events: int = 0
    replicas: int = 1
    grid_points: int = 101
    # limit solver
    h: float = 1e-3
    # fluctuations
    n_list: tuple = ()
    test_functions: tuple = ()
    # oracle
    caps: tuple = ()
    eps: float = 1e-7
    # output
    output_dir: str = ""

    def __post_init__(self):
        if self.stop not in ("time", "extinction", "max_events"):
            raise ConfigError(f"stop must be time, extinction or max_events, got {self.stop!r}")
        if self.stop == "max_events" and self.max_events <= 0:
            raise ConfigError("stop = max_events needs max_events > 0")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.lambda0, self.mu0, self.mu1, self.lambda2,
                         InfectionRate(self.infection, self.lambda1),
                         TracingRate(self.tracing, self.lambda3), parse_weight(self.psi),
                         n=self.n, time_unit=self.time_unit)

    def simulation_config(self, seed: int | None = None):
        from .simulator import SimulationConfig

        return SimulationConfig(self.model_spec(), self.S0, self.I0, self.horizon,
                                seed=self.seed if seed is None else seed,
                                stop_on_extinction=self.stop == "extinction",
                                max_events=self.max_events if self.stop == "max_events" else 0)

    @property
    def s0(self) -> float:
        return self.S0 / self.n

    @property
    def i0(self) -> float:
        return self.I0 / self.n

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


_PARSERS = {float: float, int: lambda v: int(float(v)) if float(v).is_integer() else _bad_int(v),
            str: str.strip, bool: _bool}
_TUPLES = {"n_list": _ints, "test_functions": _strs, "caps": _ints}
KEYS = tuple(f.name for f in fields(RunConfig))


def _bad_int(v):
    raise ValueError(f"not an integer: {v!r}")


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in types:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _convert(key, types[key], val)
        except ValueError as e:
            errors.append(f"line {lineno}: {key}: {e}")
    for key, val in (overrides or {}).items():
        if key not in types:
            errors.append(f"override: unknown key {key!r}")
        elif val is not None:
            values[key] = _convert(key, types[key], val) if isinstance(val, str) else val
    if errors:
        raise ConfigError("; ".join(errors))
    cfg = RunConfig(**values)
    cfg.model_spec()  # validate
    return cfg


def _convert(key, typ, val):
    if key in _TUPLES:
        return _TUPLES[key](val)
    typ = {"float": float, "int": int, "str": str, "bool": bool}.get(typ, typ)
    out = _PARSERS[typ](val)
    if typ is float and not math.isfinite(out) and key != "horizon":
        raise ValueError("must be finite")
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides)
