"""Deterministic event queue.

Events pop in ``(time_us, phase, seq)`` order. Phases order same-instant
work: message deliveries land before timers, and SFN emission runs before
the alignment check of the same instant. ``seq`` is a global push counter
so ties inside a phase resolve in insertion order.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Any

PHASE_DELIVERY = 0
PHASE_DEFAULT = 1
PHASE_EMIT = 2
PHASE_CHECK = 3


class EventKind(str, enum.Enum):
    MESSAGE_DELIVERY = "MessageDelivery"
    TRAFFIC_ARRIVAL = "TrafficArrival"
    TIMER = "Timer"
    MEASUREMENT_REPORT = "MeasurementReport"
    MOBILITY_STEP = "MobilityStep"
    SERVICE_REQUEST = "ServiceRequest"


@dataclass(frozen=True, order=True)
class Event:
    time_us: int
    phase: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._seq = 0
        self.now_us = 0
        self.popped = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, time_us: int, kind: EventKind, payload: Any = None, phase: int = PHASE_DEFAULT) -> Event:
        if time_us < self.now_us:
            raise ValueError(f"cannot schedule at {time_us} us, clock is already at {self.now_us} us")
        ev = Event(int(time_us), phase, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now_us = ev.time_us
        self.popped += 1
        return ev

    def peek_time(self) -> int | None:
        return self._heap[0].time_us if self._heap else None
