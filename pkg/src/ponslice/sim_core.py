"""Deterministic discrete-event engine.

Events are ordered by ``(time, seq)``; ``seq`` is handed out in scheduling
order so equal-time events always pop first-in first-out.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, TextIO

from .errors import SchedulingInPast


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    GRANT_START = "grant-start"
    GRANT_END = "grant-end"
    COMPUTE_DONE = "compute-done"
    BROADCAST_DONE = "broadcast-done"
    ROUND_END = "round-end"


def sim_time(value: float) -> float:
    """Validate a simulation timestamp (seconds, finite, nonnegative)."""
    value = float(value)
    if not (value >= 0.0) or math.isinf(value):
        raise ValueError(f"simulation time must be finite and >= 0, got {value!r}")
    return value


@dataclass(frozen=True, order=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    data: Any = field(default=None, compare=False)


class EventQueue:
    """Pending-event heap plus the simulation clock.

    If ``trace`` is given (any object with ``write``), every processed event
    is logged as ``time,seq,kind``.
    """

    def __init__(self, start: float = 0.0, trace: TextIO | None = None):
        self.clock = sim_time(start)
        self._heap: list[Event] = []
        self._next_seq = 0
        self.trace = trace

    def __len__(self):
        return len(self._heap)

    def schedule(self, t: float, kind: EventKind, data: Any = None) -> int:
        t = sim_time(t)
        if t < self.clock:
            raise SchedulingInPast(f"cannot schedule at t={t!r}, clock is {self.clock!r}")
        seq = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._heap, Event(t, seq, EventKind(kind), data))
        return seq

    def peek_time(self) -> float:
        return self._heap[0].time if self._heap else math.inf

    def pop_next(self) -> Event | None:
        """Pop the least event and advance the clock; ``None`` when empty."""
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.clock = ev.time
        if self.trace is not None:
            self.trace.write(f"{ev.time:.9f},{ev.seq},{ev.kind.value}\n")
        return ev

    def run_until(self, t_stop: float, handler: Callable[[Event], None]) -> float:
        """Process every event with ``time <= t_stop``; the clock ends at ``t_stop``.

        The handler may schedule further events; those falling inside the
        horizon are processed in the same call.
        """
        t_stop = float(t_stop)
        if t_stop < self.clock:
            raise SchedulingInPast(f"t_stop={t_stop!r} is before clock {self.clock!r}")
        while self._heap and self._heap[0].time <= t_stop:
            handler(self.pop_next())
        if not math.isinf(t_stop):
            self.clock = t_stop
        return self.clock

    def run(self, handler: Callable[[Event], None]) -> float:
        """Drain the queue; the clock is left at the last processed event."""
        while self._heap:
            handler(self.pop_next())
        return self.clock
