"""Domain, event, and event-stream types plus the inter-arrival transform."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np


class Event(NamedTuple):
    t: float
    s1: float
    s2: float

    @property
    def s(self) -> np.ndarray:
        return np.array([self.s1, self.s2])


class TransformedEvent(NamedTuple):
    """Event in local coordinates: inter-arrival time plus raw location."""

    dt: float
    s1: float
    s2: float

    @property
    def s(self) -> np.ndarray:
        return np.array([self.s1, self.s2])


@dataclass(frozen=True)
class Domain:
    """Observation window [0, t_end) x S with S = [x0,x1] x [y0,y1]."""

    t_end: float
    s_bounds: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        x0, y0, x1, y1 = self.s_bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError("spatial bounds must have positive extent")
        object.__setattr__(self, "s_bounds", tuple(float(v) for v in self.s_bounds))

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.s_bounds
        return (x1 - x0) * (y1 - y0)

    def contains(self, t: float, s1: float, s2: float) -> bool:
        x0, y0, x1, y1 = self.s_bounds
        return 0.0 <= t < self.t_end and x0 <= s1 <= x1 and y0 <= s2 <= y1


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events; timestamps are strictly increasing."""

    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        s = np.asarray(self.s, dtype=float).reshape(-1, 2)
        if len(t) != len(s):
            raise ValueError("times and locations must have equal length")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("event times must be strictly increasing (ties forbidden)")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    @classmethod
    def empty(cls) -> "EventStream":
        return cls(t=np.empty(0), s=np.empty((0, 2)))

    @classmethod
    def from_events(cls, events) -> "EventStream":
        rows = [(e[0], e[1][0], e[1][1]) if len(e) == 2 else tuple(e) for e in events]
        if not rows:
            return cls.empty()
        arr = np.asarray(rows, dtype=float)
        return cls(t=arr[:, 0], s=arr[:, 1:3])

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield Event(float(self.t[i]), float(self.s[i, 0]), float(self.s[i, 1]))

    def __getitem__(self, i: int) -> Event:
        return Event(float(self.t[i]), float(self.s[i, 0]), float(self.s[i, 1]))

    def prefix(self, n: int) -> "EventStream":
        return EventStream(t=self.t[:n].copy(), s=self.s[:n].copy())

    def validate_domain(self, domain: Domain) -> None:
        x0, y0, x1, y1 = domain.s_bounds
        ok = (
            np.all(self.t >= 0.0) and np.all(self.t < domain.t_end)
            and np.all(self.s[:, 0] >= x0) and np.all(self.s[:, 0] <= x1)
            and np.all(self.s[:, 1] >= y0) and np.all(self.s[:, 1] <= y1)
        )
        if not ok:
            raise ValueError("events fall outside the stated domain")


def neighborhood(s1: float, s2: float, delta: float, domain: Domain):
    """l-inf ball of radius delta around a location, clipped to the domain."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x0, y0, x1, y1 = domain.s_bounds
    return (max(s1 - delta, x0), max(s2 - delta, y0),
            min(s1 + delta, x1), min(s2 + delta, y1))


def transform_event(stream: EventStream, index: int,
                    delta: Optional[float] = None) -> TransformedEvent:
    """Local inter-arrival transform of the event at ``index``.

    With ``delta`` given, the reference time is the most recent prior event
    within l-inf distance delta of this event's location (localized history);
    otherwise the most recent prior event overall.  With no qualifying prior
    event the reference time is 0.
    """
    if index < 0 or index >= len(stream):
        raise IndexError("event index out of range")
    t = float(stream.t[index])
    s1, s2 = float(stream.s[index, 0]), float(stream.s[index, 1])
    t_n = 0.0
    if delta is None:
        if index > 0:
            t_n = float(stream.t[index - 1])
    else:
        for j in range(index - 1, -1, -1):
            if max(abs(stream.s[j, 0] - s1), abs(stream.s[j, 1] - s2)) <= delta:
                t_n = float(stream.t[j])
                break
    return TransformedEvent(t - t_n, s1, s2)


def local_history_indices(stream: EventStream, index: int, delta: float,
                          max_events: Optional[int] = None) -> np.ndarray:
    """Indices of prior events within the l-inf delta-ball, oldest first."""
    if index == 0:
        return np.empty(0, dtype=int)
    s1, s2 = stream.s[index, 0], stream.s[index, 1]
    d = np.maximum(np.abs(stream.s[:index, 0] - s1), np.abs(stream.s[:index, 1] - s2))
    idx = np.nonzero(d <= delta)[0]
    if max_events is not None and len(idx) > max_events:
        idx = idx[-max_events:]
    return idx


CSV_HEADER = ["t", "s1", "s2"]


def write_events_csv(stream: EventStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(len(stream)):
            w.writerow([repr(float(stream.t[i])),
                        repr(float(stream.s[i, 0])),
                        repr(float(stream.s[i, 1]))])


def read_events_csv(path) -> EventStream:
    with open(path, "r", newline="") as fh:
        return _parse_events_csv(fh)


def events_csv_from_text(text: str) -> EventStream:
    return _parse_events_csv(io.StringIO(text))


def _parse_events_csv(fh) -> EventStream:
    r = csv.reader(fh)
    header = next(r, None)
    if header is None or [h.strip() for h in header] != CSV_HEADER:
        raise ValueError("expected CSV header 't,s1,s2'")
    rows = []
    last_t = -np.inf
    for line in r:
        if not line:
            continue
        t, s1, s2 = (float(v) for v in line[:3])
        if t <= last_t:
            raise ValueError("event times must be strictly increasing (duplicate or out-of-order timestamp)")
        last_t = t
        rows.append((t, s1, s2))
    if not rows:
        return EventStream.empty()
    arr = np.asarray(rows)
    return EventStream(t=arr[:, 0], s=arr[:, 1:3])
