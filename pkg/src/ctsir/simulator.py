"""Exact simulation of the contact-tracing SIR jump process.

``simulate`` returns a full event log; ``ensemble`` runs independent
replicas and keeps only grid snapshots and terminal path integrals, which
is what the limit theorems and the estimator studies need.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .model import (
    AgedCohort,
    DomainError,
    EpidemicState,
    ModelSpec,
    WeightFunction,
)

INTEGRAL_NAMES = ("int_I", "int_rpsi", "int_I_rpsi", "int_I_rpsi_ratio", "int_rpsi_active")


class SimulationError(RuntimeError):
    """The simulation aborted (envelope violation, overflow, quadrature)."""


# ---------------------------------------------------------------------------
# configuration and seeds


@dataclass(frozen=True)
class SimulationConfig:
    spec: ModelSpec
    S0: int
    I0: int
    horizon: float
    seed: int = 0
    stop_on_extinction: bool = False
    max_events: int = 0
    thinning_stats: bool = True

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.S0 < 0 or self.I0 < 0:
            raise ValueError("initial counts must be >= 0")
        if self.max_events < 0:
            raise ValueError("max_events must be >= 0")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(), "S0": int(self.S0), "I0": int(self.I0),
            "horizon": float(self.horizon), "seed": int(self.seed),
            "stop_on_extinction": bool(self.stop_on_extinction),
            "max_events": int(self.max_events), "thinning_stats": bool(self.thinning_stats),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return cls(spec=ModelSpec.from_dict(d["spec"]), S0=int(d["S0"]), I0=int(d["I0"]),
                   horizon=float(d["horizon"]), seed=int(d.get("seed", 0)),
                   stop_on_extinction=bool(d.get("stop_on_extinction", False)),
                   max_events=int(d.get("max_events", 0)),
                   thinning_stats=bool(d.get("thinning_stats", True)))


def replica_seeds(master_seed: int, count: int) -> np.ndarray:
    """Derive per-replica 32-bit seeds from a master seed.

    The words come from ``numpy.random.SeedSequence(master_seed)``, so the
    first k seeds do not depend on ``count``.
    """
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    words = np.random.SeedSequence(int(master_seed)).generate_state(count, dtype=np.uint32)
    return words.astype(np.int64)


def stream_seed(seed: int) -> int:
    """The generator seed used by ``simulate`` for a configuration seed."""
    return int(replica_seeds(seed, 1)[0])


def _pack(spec: ModelSpec):
    psi = spec.psi
    p1, p2 = psi.params()
    par = np.array([spec.lambda0, spec.mu0, spec.lambda1, spec.mu1, spec.lambda2,
                    spec.lambda3, float(spec.n), p1, p2, psi.sup], dtype=np.float64)
    ipar = np.array([spec.infection.code, spec.tracing.code, psi.kind,
                     1 if psi.nonincreasing else 0], dtype=np.int64)
    return par, ipar


def _pack_tests(tests):
    tests = list(tests or ())
    tk = np.array([f.kind for f in tests], dtype=np.int64)
    tp = np.array([f.params() for f in tests], dtype=np.float64).reshape(-1, 2)
    return tk, np.ascontiguousarray(tp[:, 0]), np.ascontiguousarray(tp[:, 1])


def _raise_status(status, detail=""):
    if status == K.ENVELOPE_VIOLATION:
        raise SimulationError("thinning envelope violated: tracing rate exceeded its bound "
                              "(non-monotone weight with a stale bound?)" + detail)
    if status == K.COUNT_OVERFLOW:
        raise SimulationError("count overflow" + detail)
    if status == K.QUADRATURE_FAILURE:
        raise SimulationError("path integral quadrature did not reach tolerance " + detail)


# ---------------------------------------------------------------------------
# event logs


@dataclass(frozen=True)
class EventRecord:
    k: int
    t: float
    event: int
    S: int
    I: int
    R_count: int
    r_psi_pre: float

    def to_dict(self):
        return {"k": self.k, "t": self.t, "event": self.event, "S": self.S, "I": self.I,
                "R_count": self.R_count, "r_psi_pre": self.r_psi_pre}


@dataclass
class EventLog:
    """Observed sequence of (event type, time) with post-event snapshots.

    Arrays are indexed by event order; ``S``, ``I`` and ``R_count`` are the
    counts just after each event and ``r_psi_pre`` is the cohort pairing
    just before it (NaN when unknown, e.g. ingested data).
    """

    n: int
    S0: int
    I0: int
    horizon: float
    t: np.ndarray
    event: np.ndarray
    S: np.ndarray
    I: np.ndarray
    R_count: np.ndarray
    r_psi_pre: np.ndarray
    psi: WeightFunction | None = None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def records(self) -> list[EventRecord]:
        return [EventRecord(k + 1, float(self.t[k]), int(self.event[k]), int(self.S[k]),
                            int(self.I[k]), int(self.R_count[k]), float(self.r_psi_pre[k]))
                for k in range(len(self.t))]

    def counts(self) -> np.ndarray:
        return np.bincount(self.event.astype(np.int64), minlength=6)[:6]

    def I_pre(self) -> np.ndarray:
        """Number of infectives just before each event."""
        return np.concatenate(([self.I0], self.I[:-1])).astype(np.int64) if len(self) else \
            np.zeros(0, dtype=np.int64)

    def detection_times(self) -> np.ndarray:
        return self.t[(self.event == 3) | (self.event == 4)]

    def state_at(self, t: float) -> EpidemicState:
        """Counts and cohort right after all events with time <= t."""
        k = int(np.searchsorted(self.t, t, side="right"))
        if k == 0:
            return EpidemicState(t, int(self.S0), int(self.I0), AgedCohort())
        det = self.t[:k][(self.event[:k] == 3) | (self.event[:k] == 4)]
        return EpidemicState(t, int(self.S[k - 1]), int(self.I[k - 1]), AgedCohort(det))


@dataclass
class Trajectory(EventLog):
    config: SimulationConfig | None = None
    integrals: dict = field(default_factory=dict)
    rate_integrals: np.ndarray | None = None
    proposals: int = 0
    rejections: int = 0
    terminal_time: float = 0.0

    @property
    def initial(self):
        return (self.S0, self.I0)


def replay(log: EventLog) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rebuild the (S, I, R count) snapshots from event types alone."""
    e = log.event.astype(np.int64)
    dS = np.select([e == 0, (e == 1) | (e == 2)], [1, -1], 0)
    dI = np.select([e == 2, e >= 3], [1, -1], 0)
    dR = ((e == 3) | (e == 4)).astype(np.int64)
    return (log.S0 + np.cumsum(dS), log.I0 + np.cumsum(dI), np.cumsum(dR))


# ---------------------------------------------------------------------------
# simulation


def simulate(config: SimulationConfig) -> Trajectory:
    """Sample one trajectory; the seed fully determines the result."""
    spec = config.spec
    par, ipar = _pack(spec)
    tk, tp1, tp2 = _pack_tests(())
    grid = np.zeros(0)
    g4 = np.zeros((0, 4))
    g5 = np.zeros((0, K.N_INTEGRALS))
    g6 = np.zeros((0, 6))
    res = K.simulate_one(par, ipar, int(config.S0), int(config.I0), float(config.horizon),
                         stream_seed(config.seed), int(config.max_events),
                         bool(config.stop_on_extinction), True, grid, tk, tp1, tp2,
                         g4, g5, g6, g6.copy())
    (status, t_end, S, I, counts, integ, lam, nprop, nrej, bad,
     ev_t, ev_e, ev_s, ev_i, ev_r, ev_x, det) = res
    _raise_status(status, f"(interval starting at t={bad})" if status == K.QUADRATURE_FAILURE else "")
    return Trajectory(
        n=spec.n, S0=int(config.S0), I0=int(config.I0), horizon=float(config.horizon),
        t=ev_t, event=ev_e.astype(np.int8), S=ev_s, I=ev_i, R_count=ev_r, r_psi_pre=ev_x,
        psi=spec.psi, config=config,
        integrals=dict(zip(INTEGRAL_NAMES, map(float, integ))),
        rate_integrals=np.asarray(lam), proposals=int(nprop), rejections=int(nrej),
        terminal_time=float(t_end),
    )


def path_integrals(log: EventLog, psi: WeightFunction | None = None) -> dict:
    """Path integrals of a completed log over [0, horizon] for weight ``psi``.

    Keys: ``int_I`` (exact, I piecewise constant), ``int_rpsi``,
    ``int_I_rpsi``, ``int_I_rpsi_ratio`` (I <R,psi> / (I + <R,psi>)) and
    ``int_rpsi_active`` (<R,psi> restricted to I > 0).  All are in count
    units; divide by n, n and n**2, n, n for renormalized values.
    """
    psi = psi if psi is not None else log.psi
    if psi is None:
        raise ValueError("a weight function is required")
    end = log.horizon
    if isinstance(log, Trajectory) and log.terminal_time:
        end = log.terminal_time
    p1, p2 = psi.params()
    acc, _, _, ok = K.replay_integrals(np.ascontiguousarray(log.t, dtype=np.float64),
                                       np.ascontiguousarray(log.event, dtype=np.int64),
                                       int(log.I0), float(end), psi.kind, p1, p2, psi.sup)
    if not ok:
        raise SimulationError("path integral quadrature did not reach tolerance")
    return dict(zip(INTEGRAL_NAMES, map(float, acc)))


def pre_event_pairings(log: EventLog, psi: WeightFunction) -> np.ndarray:
    """<R_{t-}, psi> at each event time, recomputed for ``psi``."""
    p1, p2 = psi.params()
    _, x_pre, _, _ = K.replay_integrals(np.ascontiguousarray(log.t, dtype=np.float64),
                                        np.ascontiguousarray(log.event, dtype=np.int64),
                                        int(log.I0), float(log.horizon), psi.kind, p1, p2, psi.sup)
    return x_pre


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Ensemble:
    """Per-replica grid snapshots of independent trajectories.

    ``state[r, g]`` holds S, I, R count, <R,psi> and one column per test
    function, in count units.  ``integrals``, ``rate_integrals`` and
    ``counts`` are cumulative up to each grid time; ``totals`` has one row
    per replica at the horizon (see ``TOTAL_COLUMNS``).
    """

    n: int
    grid: np.ndarray
    state: np.ndarray
    integrals: np.ndarray
    rate_integrals: np.ndarray
    counts: np.ndarray
    totals: np.ndarray
    seeds: np.ndarray
    test_functions: tuple = ()

    @property
    def replicas(self):
        return self.state.shape[0]

    def renormalized(self) -> np.ndarray:
        """(replica, grid, [s, i, <r,psi>, <r,1>, <r,f>...]) divided by n."""
        st = self.state
        cols = [st[..., 0], st[..., 1], st[..., 3], st[..., 2]] + \
               [st[..., 4 + f] for f in range(st.shape[2] - 4)]
        return np.stack(cols, axis=-1) / self.n

    def moments(self) -> dict:
        x = self.renormalized()
        M = x.shape[0]
        mean = x.mean(axis=0)
        if M > 1:
            d = x - mean
            cov = np.einsum("rga,rgb->gab", d, d) / (M - 1)
        else:
            cov = np.zeros(x.shape[1:] + (x.shape[2],))
        var = np.diagonal(cov, axis1=1, axis2=2).copy()
        return {"mean": mean, "var": var, "cov": cov,
                "sem": np.sqrt(var / M) if M > 1 else np.zeros_like(var)}


TOTAL_COLUMNS = (("t_end",) + INTEGRAL_NAMES + tuple(f"Lambda{k}" for k in range(6))
                 + tuple(f"N{k}" for k in range(6)) + ("proposals", "rejections"))


def ensemble(config: SimulationConfig, replicas: int, grid, test_functions=(),
             threads: int = 1) -> Ensemble:
    """Run independent replicas with seeds derived from ``config.seed``.

    Replicas are split over ``threads`` worker threads (the kernel releases
    the GIL); results are stored by replica index, so the output does not
    depend on the schedule.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or np.any(np.diff(grid) < 0) or np.any(grid < 0) or np.any(grid > config.horizon):
        raise DomainError("grid must be nondecreasing within [0, horizon]")
    spec = config.spec
    par, ipar = _pack(spec)
    tk, tp1, tp2 = _pack_tests(test_functions)
    seeds = replica_seeds(config.seed, replicas)
    ng = len(grid)
    state = np.empty((replicas, ng, 4 + len(tk)))
    integ = np.empty((replicas, ng, K.N_INTEGRALS))
    lam = np.empty((replicas, ng, 6))
    cnt = np.empty((replicas, ng, 6))
    status = np.zeros(replicas, dtype=np.int64)
    totals = np.empty((replicas, len(TOTAL_COLUMNS)))

    def work(lo, hi):
        K.run_replicas(par, ipar, int(config.S0), int(config.I0), float(config.horizon),
                       seeds[lo:hi], int(config.max_events), bool(config.stop_on_extinction),
                       grid, tk, tp1, tp2, state[lo:hi], integ[lo:hi], lam[lo:hi], cnt[lo:hi],
                       status[lo:hi], totals[lo:hi])

    threads = max(1, min(int(threads), replicas))
    bounds = np.linspace(0, replicas, threads + 1).astype(int)
    if threads == 1:
        work(0, replicas)
    else:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(lambda k: work(bounds[k], bounds[k + 1]), range(threads)))
    bad = np.flatnonzero(status)
    if bad.size:
        _raise_status(int(status[bad[0]]), f" (replica {int(bad[0])})")
    return Ensemble(n=spec.n, grid=grid, state=state, integrals=integ, rate_integrals=lam,
                    counts=cnt, totals=totals, seeds=seeds, test_functions=tuple(test_functions))


# ---------------------------------------------------------------------------
# file formats


def write_event_log(log: EventLog, path_or_file, header: dict | None = None) -> None:
    """JSON lines: a header object, then one record per event."""
    if header is None:
        if isinstance(log, Trajectory) and log.config is not None:
            header = {"config": log.config.to_dict()}
        else:
            header = {}
    header = dict(header)
    header.setdefault("n", int(log.n))
    header.setdefault("S0", int(log.S0))
    header.setdefault("I0", int(log.I0))
    header.setdefault("horizon", float(log.horizon))
    if log.psi is not None:
        header.setdefault("psi", log.psi.to_string())
    if log.metadata:
        header.setdefault("metadata", log.metadata)
    lines = [json.dumps(header, sort_keys=True)]
    for k in range(len(log)):
        x = float(log.r_psi_pre[k])
        lines.append(json.dumps({
            "k": k + 1, "t": float(log.t[k]), "event": int(log.event[k]), "S": int(log.S[k]),
            "I": int(log.I[k]), "R_count": int(log.R_count[k]),
            "r_psi_pre": x if math.isfinite(x) else None}))
    text = "\n".join(lines) + "\n"
    _write_text(path_or_file, text)


def read_event_log(path_or_file) -> EventLog:
    from .model import parse_weight

    text = _read_text(path_or_file)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty event log")
    header = json.loads(lines[0])
    recs = [json.loads(ln) for ln in lines[1:]]
    for j, r in enumerate(recs):
        if r.get("k") != j + 1:
            raise ValueError(f"record {j + 1}: expected k={j + 1}, got {r.get('k')}")
    t = np.array([r["t"] for r in recs], dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("event times must be strictly increasing")
    psi = parse_weight(header["psi"]) if "psi" in header else None
    log = EventLog(
        n=int(header["n"]), S0=int(header["S0"]), I0=int(header["I0"]),
        horizon=float(header["horizon"]), t=t,
        event=np.array([r["event"] for r in recs], dtype=np.int8),
        S=np.array([r["S"] for r in recs], dtype=np.int64),
        I=np.array([r["I"] for r in recs], dtype=np.int64),
        R_count=np.array([r["R_count"] for r in recs], dtype=np.int64),
        r_psi_pre=np.array([np.nan if r["r_psi_pre"] is None else r["r_psi_pre"] for r in recs],
                           dtype=float),
        psi=psi, metadata=header.get("metadata", {}))
    log.metadata = dict(log.metadata)
    if "config" in header:
        log.metadata["config"] = header["config"]
    return log


def trajectory_grid(log: EventLog, grid, psi: WeightFunction | None = None) -> np.ndarray:
    """Renormalized (t, s, i, r_count, r_psi) sampled on a time grid."""
    psi = psi if psi is not None else log.psi
    grid = np.asarray(grid, dtype=float)
    k = np.searchsorted(log.t, grid, side="right")
    S = np.where(k > 0, log.S[np.maximum(k - 1, 0)], log.S0) if len(log) else np.full(len(grid), log.S0)
    I = np.where(k > 0, log.I[np.maximum(k - 1, 0)], log.I0) if len(log) else np.full(len(grid), log.I0)
    R = np.where(k > 0, log.R_count[np.maximum(k - 1, 0)], 0) if len(log) else np.zeros(len(grid))
    det = log.detection_times()
    rpsi = np.empty(len(grid))
    for j, g in enumerate(grid):
        d = det[det <= g]
        rpsi[j] = float(np.sum(psi(g - d))) if d.size else 0.0
    n = log.n
    return np.column_stack([grid, S / n, I / n, R / n, rpsi / n])


def write_trajectory_csv(log: EventLog, path_or_file, grid, psi=None) -> None:
    rows = trajectory_grid(log, grid, psi)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "s", "i", "r_count", "r_psi"])
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    _write_text(path_or_file, buf.getvalue())


def _write_text(path_or_file, text):
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", newline="") as fh:
            fh.write(text)


def _read_text(path_or_file):
    if hasattr(path_or_file, "read"):
        return path_or_file.read()
    with open(path_or_file) as fh:
        return fh.read()
