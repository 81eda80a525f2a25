"""World-level ordered event log: audit entries and metric events share one
monotone id space, which the API event stream and run reports consume."""

from __future__ import annotations

import itertools

from micromano.sim import SimClock


class EventLog:
    def __init__(self, clock: SimClock):
        self.clock = clock
        self.entries: list[dict] = []
        self._ids = itertools.count(1)
        self._subscribers: list = []

    def emit(self, kind: str, **data) -> dict:
        entry = {"id": next(self._ids), "ts": self.clock.now, "kind": kind, **data}
        self.entries.append(entry)
        for fn in list(self._subscribers):
            fn(entry)
        return entry

    def subscribe(self, fn) -> None:
        self._subscribers.append(fn)

    def unsubscribe(self, fn) -> None:
        if fn in self._subscribers:
            self._subscribers.remove(fn)

    def since(self, last_id: int) -> list[dict]:
        return [e for e in self.entries if e["id"] > last_id]

    def for_instance(self, instance_id: str) -> list[dict]:
        return [e for e in self.entries if e.get("instance") == instance_id]
