"""
Deterministic discrete-event engine: simulated clock, ordered event queue and seeded randomness source.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, NamedTuple

import numpy as np

from .errors import EventBudgetExceeded, SchedulingError
from .utils import format_number

logger = logging.getLogger(__name__)

type SimTime = float
type Handler = Callable[[SimEvent], None]

DEFAULT_MAX_EVENTS = 10**7


class EventKind(StrEnum):
    FLOW_START = "flow-start"
    FLOW_END = "flow-end"
    ROUND_COMPLETE = "round-complete"
    SWITCHOVER = "switchover"
    REQUEST_ARRIVAL = "request-arrival"
    MIGRATION_START = "migration-start"
    SCENARIO_END = "scenario-end"


@dataclass(slots=True, eq=False)
class SimEvent:
    at: SimTime
    seq: int
    kind: EventKind
    payload: Any = None
    cancelled: bool = field(default=False, repr=False)

    @property
    def key(self) -> tuple[SimTime, int]:
        return (self.at, self.seq)


class DispatchRecord(NamedTuple):
    at: SimTime
    seq: int
    kind: EventKind


class EventQueue:
    """
    Pending events ordered by `(at, seq)`. Cancelled events stay in the heap and are dropped when they surface.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[SimTime, int, SimEvent]] = []
        self._seq = itertools.count()
        self.floor: SimTime = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def next_seq(self) -> int:
        return next(self._seq)

    def schedule(self, event: SimEvent) -> None:
        if not math.isfinite(event.at) or event.at < self.floor:
            raise SchedulingError(event.at, self.floor)
        heapq.heappush(self._heap, (event.at, event.seq, event))

    def peek_time(self) -> SimTime | None:
        self._discard_cancelled()
        if not self._heap:
            return None
        return self._heap[0][0]

    def pop(self) -> SimEvent:
        self._discard_cancelled()
        at, _, event = heapq.heappop(self._heap)
        self.floor = at
        return event

    def _discard_cancelled(self) -> None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)


class Simulator:
    """
    Single-threaded event loop. Handlers are registered per event kind; an event without a handler is still
    dispatched (and traced), it just does nothing.
    """

    def __init__(self, *, seed: int = 0, max_events: int = DEFAULT_MAX_EVENTS) -> None:
        self.queue = EventQueue()
        self.seed = seed
        # Reserved for stochastic extensions, the models below never draw from it.
        self.rng = np.random.default_rng(seed)
        self.max_events = max_events
        self.dispatched = 0
        self.dispatch_trace: list[DispatchRecord] = []
        self._clock: SimTime = 0.0
        self._handlers: dict[EventKind, Handler] = {}

    @property
    def clock(self) -> SimTime:
        return self._clock

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, at: SimTime, kind: EventKind, payload: Any = None) -> SimEvent:
        if at < self._clock:
            raise SchedulingError(at, self._clock)
        event = SimEvent(at=at, seq=self.queue.next_seq(), kind=kind, payload=payload)
        self.queue.schedule(event)
        return event

    def schedule_in(self, delay: SimTime, kind: EventKind, payload: Any = None) -> SimEvent:
        return self.schedule(self._clock + delay, kind, payload)

    def cancel(self, event: SimEvent | None) -> None:
        if event is not None:
            event.cancelled = True

    def run_until(self, t_end: SimTime) -> list[DispatchRecord]:
        """
        Dispatch every pending event with `at <= t_end` in key order, then leave the clock at `t_end`.
        """
        if not math.isfinite(t_end):
            raise ValueError("t_end must be finite")

        dispatched: list[DispatchRecord] = []
        while (at := self.queue.peek_time()) is not None and at <= t_end:
            if self.dispatched >= self.max_events:
                raise EventBudgetExceeded(self.max_events, at)
            event = self.queue.pop()
            self._clock = event.at
            self.dispatched += 1
            record = DispatchRecord(event.at, event.seq, event.kind)
            dispatched.append(record)
            self.dispatch_trace.append(record)
            if handler := self._handlers.get(event.kind):
                handler(event)

        self._clock = max(self._clock, t_end)
        self.queue.floor = self._clock
        logger.debug("run_until(%s) dispatched %d events", t_end, len(dispatched))
        return dispatched


class TraceLog:
    """
    Deterministic text trace, one `t=<s> event=<kind> key=value...` line per record.
    """

    def __init__(self) -> None:
        self.lines: list[str] = []

    def emit(self, at: SimTime, event: str, **fields: str | float | int | bool | None) -> None:
        parts = [f"t={format_number(at)}", f"event={event}"]
        for key, value in fields.items():
            if value is None:
                continue
            parts.append(f"{key}={value if isinstance(value, str) else format_number(value)}")
        self.lines.append(" ".join(parts))

    def render(self) -> str:
        return "".join(f"{line}\n" for line in self.lines)
