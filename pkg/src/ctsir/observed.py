"""Observed-data event logs (registry style CSV).

Schema: ``date, event_type[, infection_date]`` with event_type one of
``infection``, ``spontaneous_detection``, ``traced_detection``, ``exit``.
Dates are ISO ``YYYY-MM-DD`` or plain numbers (days).

Reconstruction assumptions:

* time is measured in days from ``origin`` (default: the first date for
  ISO dates, 0 for numeric ones);
* k events sharing a calendar date are spread at offsets j/(k+1),
  j = 1..k, inside that day in file order, so times are strictly
  increasing (numeric dates are used as given and must already be distinct);
* recruitment and susceptible exits are not observed.  S is rebuilt from
  ``S0`` minus infections, or, when a population series is supplied, from
  the latest series value minus the infections recorded since that date.
  The detection likelihood does not involve S.
* the infection date column is kept as metadata only.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import warnings

import numpy as np

from .model import WeightFunction
from .simulator import EventLog

EVENT_CODES = {"infection": 2, "spontaneous_detection": 3, "traced_detection": 4, "exit": 5}
EVENT_LABELS = {v: k for k, v in EVENT_CODES.items()}


def _parse_date(text):
    text = text.strip()
    try:
        return float(text), False
    except ValueError:
        return float(_dt.date.fromisoformat(text).toordinal()), True


def ingest_observed(path_or_file, *, n: int = 1, I0: int = 0, S0: int = 0,
                    horizon: float | None = None, origin=None, population=None,
                    psi: WeightFunction | None = None) -> EventLog:
    """Read an observed CSV into an EventLog (see module docstring)."""
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file, newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        warnings.warn("empty observed file: returning an empty log", UserWarning, stacklevel=2)
        return _log(n, S0, I0, horizon or 0.0, [], [], [], psi, {"source": "observed"})
    header = [h.strip() for h in rows[0]]
    errors = []
    if header[:2] != ["date", "event_type"] or len(header) > 3 or \
            (len(header) == 3 and header[2] != "infection_date"):
        raise ValueError("line 1: header must be date,event_type[,infection_date]")
    raw = []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) < 2 or len(r) > len(header):
            errors.append(f"line {lineno}: expected {len(header)} fields")
            continue
        try:
            d, iso = _parse_date(r[0])
        except ValueError:
            errors.append(f"line {lineno}: bad date {r[0]!r}")
            continue
        et = r[1].strip()
        if et not in EVENT_CODES:
            errors.append(f"line {lineno}: unknown event_type {et!r}")
            continue
        inf = r[2].strip() if len(r) > 2 else ""
        if inf:
            try:
                _parse_date(inf)
            except ValueError:
                errors.append(f"line {lineno}: bad infection_date {inf!r}")
                continue
        raw.append((lineno, d, iso, EVENT_CODES[et], inf))
    if errors:
        raise ValueError("; ".join(errors))
    if not raw:
        warnings.warn("observed file has no events: returning an empty log", UserWarning,
                      stacklevel=2)
        return _log(n, S0, I0, horizon or 0.0, [], [], [], psi, {"source": "observed"})
    days = np.array([d for _, d, _, _, _ in raw])
    iso = any(x for _, _, x, _, _ in raw)
    if np.any(np.diff(days) < 0):
        k = int(np.flatnonzero(np.diff(days) < 0)[0])
        raise ValueError(f"line {raw[k + 1][0]}: dates must be nondecreasing")
    if origin is None:
        org = days[0] if iso else 0.0
    else:
        org = _parse_date(str(origin))[0]
    t = days - org
    if iso:
        # spread same-day events inside the day
        t = t.copy()
        start = 0
        while start < len(t):
            end = start
            while end + 1 < len(t) and days[end + 1] == days[start]:
                end += 1
            k = end - start + 1
            t[start:end + 1] = t[start] + np.arange(1, k + 1) / (k + 1)
            start = end + 1
    elif np.any(np.diff(t) <= 0):
        k = int(np.flatnonzero(np.diff(t) <= 0)[0])
        raise ValueError(f"line {raw[k + 1][0]}: numeric times must be strictly increasing")
    if np.any(t < 0):
        raise ValueError("events before the origin")
    events = [e for _, _, _, e, _ in raw]
    T = float(horizon) if horizon is not None else float(t[-1])
    if T < t[-1]:
        raise ValueError("horizon precedes the last event")
    meta = {"source": "observed", "origin": float(org), "iso_dates": bool(iso),
            "infection_dates": [x for *_, x in raw]}
    S_base = _population_series(population, org, t) if population is not None else None
    return _log(n, S0, I0, T, t, events, S_base, psi, meta)


def _population_series(population, org, t):
    """Latest supplied S value at each event time (None before the first)."""
    pts = sorted((_parse_date(str(d))[0] - org, float(s)) for d, s in population)
    times = np.array([p[0] for p in pts])
    vals = np.array([p[1] for p in pts])
    k = np.searchsorted(times, t, side="right") - 1
    return [(times[j], vals[j]) if j >= 0 else None for j in k]


def _log(n, S0, I0, T, t, events, S_base, psi, meta):
    t = np.asarray(t, dtype=float)
    e = np.asarray(events, dtype=np.int64)
    inf = np.cumsum(e == 2)
    I = I0 + inf - np.cumsum(e >= 3)
    if np.any(I < 0):
        k = int(np.flatnonzero(I < 0)[0])
        raise ValueError(f"event {k + 1}: more removals than infectives (set I0)")
    S = S0 - inf
    if S_base is not None:
        for k, base in enumerate(S_base):
            if base is not None:
                since = inf[k] - np.sum((e[:k + 1] == 2) & (t[:k + 1] <= base[0]))
                S[k] = int(round(base[1])) - since
    R = np.cumsum((e == 3) | (e == 4))
    return EventLog(n=int(n), S0=int(S0), I0=int(I0), horizon=float(T), t=t,
                    event=e.astype(np.int8), S=np.asarray(S, dtype=np.int64),
                    I=np.asarray(I, dtype=np.int64), R_count=np.asarray(R, dtype=np.int64),
                    r_psi_pre=np.full(len(t), np.nan), psi=psi, metadata=meta)


def export_observed(log: EventLog, path_or_file=None) -> str:
    """Write the observable part of a log (events 2..5) with numeric dates."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "event_type"])
    for t, e in zip(log.t, log.event):
        if int(e) >= 2:
            w.writerow([repr(float(t)), EVENT_LABELS[int(e)]])
    text = buf.getvalue()
    if path_or_file is not None:
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w", newline="") as fh:
                fh.write(text)
    return text
