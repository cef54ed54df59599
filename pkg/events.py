"""
Solver, attack and sweep code publish progress events; the CLI decides how to show them.
"""

import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable, DefaultDict, Optional

SOLVER_INCUMBENT = "SOLVER_INCUMBENT"
SOLVER_RESTART = "SOLVER_RESTART"
ATTACK_RETRY = "ATTACK_RETRY"
SWEEP_CELL_DONE = "SWEEP_CELL_DONE"

EVENT_NAMES = frozenset({SOLVER_INCUMBENT, SOLVER_RESTART, ATTACK_RETRY, SWEEP_CELL_DONE})

Handler = Callable[["Event"], None]


@dataclass(frozen=True)
class Event:
    """One progress notice: an incumbent, a restart, a b_max retry or a finished sweep cell."""

    name: str
    payload: dict[str, Any]


class EventBus:
    """
    Routes progress events to handlers keyed by event name.

    Solver workers publish from their own threads; handlers run one at a time
    under the bus lock, so they should return quickly.
    """

    def __init__(self) -> None:
        self._handlers: DefaultDict[str, list[Handler]] = defaultdict(list)
        self._lock = threading.RLock()

    def subscribe(self, event_name: str, handler: Handler) -> None:
        if event_name not in EVENT_NAMES:
            raise ValueError(f"Unknown event '{event_name}'. Known: {', '.join(sorted(EVENT_NAMES))}")
        with self._lock:
            self._handlers[event_name].append(handler)

    def publish(self, event: Event) -> None:
        with self._lock:
            handlers = list(self._handlers.get(event.name, ()))
            for handler in handlers:
                handler(event)

    def emit(self, name: str, **payload: Any) -> Event:
        event = Event(name=name, payload=payload)
        self.publish(event)
        return event


def emit(bus: Optional[EventBus], name: str, **payload: Any) -> None:
    """Publishes on `bus` when one is attached; producers may run without a bus."""
    if bus is not None:
        bus.emit(name, **payload)
