"""Deterministic discrete-event substrate: virtual clock, lossy links, packet transmission.

All time values are integer microseconds of virtual time. Every stochastic
draw comes from a named substream of a single 64-bit seed, so a run is a pure
function of (seed, schedule).
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable

US_PER_MS = 1_000
US_PER_S = 1_000_000


class PastTime(Exception):
    """An event was scheduled before the current virtual time."""


@dataclass(frozen=True)
class Packet:
    seq: int
    size_bytes: int
    src: str
    dst: str
    slice_tag: str | None = None
    sent_at: int = 0

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")


@dataclass(frozen=True)
class Delivered:
    at: int


@dataclass(frozen=True)
class Dropped:
    reason: str = "loss"


class SimClock:
    """Virtual clock with a stable time-ordered event queue.

    Events with equal timestamps fire in insertion order. Callbacks run with
    ``now`` set to their own timestamp and may schedule further events.
    """

    def __init__(self, seed: int = 0):
        self.now = 0
        self.seed = seed
        self._heap: list[tuple[int, int, int, Callable[[], None], str | None]] = []
        self._seq = itertools.count()
        self._next_id = itertools.count(1)
        self._cancelled: set[int] = set()

    def rng(self, *names: object) -> random.Random:
        """Return a fresh RNG substream derived from the global seed and a name."""
        key = ":".join(str(n) for n in (self.seed,) + names)
        return random.Random(key)

    def schedule(self, at: int, callback: Callable[[], None], label: str | None = None) -> int:
        if at < self.now:
            raise PastTime(f"cannot schedule at {at} (now={self.now})")
        event_id = next(self._next_id)
        heapq.heappush(self._heap, (at, next(self._seq), event_id, callback, label))
        return event_id

    def schedule_in(self, delay: int, callback: Callable[[], None], label: str | None = None) -> int:
        return self.schedule(self.now + delay, callback, label)

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    def advance(self, until: int) -> list[tuple[int, int, str | None]]:
        """Fire all events with timestamp <= until; returns the fired trace."""
        if until < self.now:
            raise PastTime(f"cannot advance to {until} (now={self.now})")
        fired: list[tuple[int, int, str | None]] = []
        while self._heap and self._heap[0][0] <= until:
            at, _, event_id, callback, label = heapq.heappop(self._heap)
            if event_id in self._cancelled:
                self._cancelled.discard(event_id)
                continue
            self.now = at
            fired.append((at, event_id, label))
            callback()
        self.now = until
        return fired

    def run_until_idle(self, max_time: int | None = None) -> list[tuple[int, int, str | None]]:
        """Drain the queue, optionally capping virtual time at max_time."""
        fired: list[tuple[int, int, str | None]] = []
        while self._heap:
            at = self._heap[0][0]
            if max_time is not None and at > max_time:
                break
            fired.extend(self.advance(at))
        if max_time is not None and self.now < max_time:
            self.now = max_time
        return fired

    @property
    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def next_event_at(self) -> int | None:
        """Timestamp of the earliest live pending event, or None."""
        while self._heap and self._heap[0][2] in self._cancelled:
            _, _, event_id, _, _ = heapq.heappop(self._heap)
            self._cancelled.discard(event_id)
        return self._heap[0][0] if self._heap else None


@dataclass
class Link:
    """Point-to-point link with propagation latency, jitter, Bernoulli loss
    and a serialization rate. A packet occupies the link for its serialization
    time, which gives FIFO queueing through the ``busy_until`` watermark.
    """

    id: str
    latency_us: int
    capacity_mbps: float
    jitter_us: int = 0
    loss_prob: float = 0.0
    up: bool = True
    busy_until: int = 0
    transmitted: int = 0
    delivered: int = 0
    dropped: int = 0
    delivery_log: list[tuple[int, int]] = field(default_factory=list, repr=False)
    _rng: random.Random | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.latency_us < 0:
            raise ValueError(f"link {self.id}: latency_us must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"link {self.id}: loss_prob must be in [0,1]")
        if self.capacity_mbps <= 0:
            raise ValueError(f"link {self.id}: capacity_mbps must be > 0")

    def serialization_us(self, size_bytes: int) -> int:
        # bits / (mbps * 1e6 bit/s) seconds == bits / mbps microseconds
        return max(1, round(size_bytes * 8 / self.capacity_mbps))

    def transmit(self, packet: Packet, now: int) -> Delivered | Dropped:
        """Decide the fate of a packet entering the link at ``now``.

        The outcome is determined immediately; a Delivered result carries the
        future arrival time for the caller to schedule against.
        """
        self.transmitted += 1
        if not self.up:
            self.dropped += 1
            return Dropped("link_down")
        if self.loss_prob > 0.0 and self._roll() < self.loss_prob:
            self.dropped += 1
            return Dropped("loss")
        start = max(now, self.busy_until)
        self.busy_until = start + self.serialization_us(packet.size_bytes)
        at = self.busy_until + self.latency_us + self._jitter()
        at = max(at, now + 1)
        self.delivered += 1
        self.delivery_log.append((at, packet.size_bytes))
        return Delivered(at)

    def _roll(self) -> float:
        if self._rng is None:
            raise RuntimeError(f"link {self.id} has no RNG bound; create it via make_link()")
        return self._rng.random()

    def _jitter(self) -> int:
        if self.jitter_us <= 0:
            return 0
        if self._rng is None:
            raise RuntimeError(f"link {self.id} has no RNG bound; create it via make_link()")
        return self._rng.randint(-self.jitter_us, self.jitter_us)


def make_link(clock: SimClock, link_id: str, latency_us: int, capacity_mbps: float,
              jitter_us: int = 0, loss_prob: float = 0.0, up: bool = True) -> Link:
    """Create a link whose loss/jitter draws come from a per-link substream."""
    link = Link(id=link_id, latency_us=latency_us, capacity_mbps=capacity_mbps,
                jitter_us=jitter_us, loss_prob=loss_prob, up=up)
    link._rng = clock.rng("link", link_id)
    return link
