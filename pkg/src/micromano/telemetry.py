"""Central data aggregation: a time-series metric store, token-authenticated
query access, polling collectors, and a supervisor that restarts crashed
collectors while logging every event.

Management data (tokens, clients) and network data (metric streams) live in
two separate stores with disjoint APIs. The metric store can journal accepted
points to an append-only file of length-prefixed JSON records.
"""

from __future__ import annotations

import bisect
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

from micromano.sim import SimClock, US_PER_S

log = logging.getLogger(__name__)

METRICS = frozenset({
    "latency_us", "jitter_us", "loss_rate", "throughput_mbps",
    "bandwidth_mbps", "vcpu_used", "memory_used_mb",
})

DEFAULT_TOKEN_TTL_S = 3600
SDN_POLL_INTERVAL_US = 1 * US_PER_S
VIM_POLL_INTERVAL_US = 5 * US_PER_S

_JOURNAL_LEN = struct.Struct(">I")


class AuthRequired(Exception):
    pass


class EmptyRange(Exception):
    pass


@dataclass(frozen=True)
class MetricSample:
    source: str
    metric: str
    value: float
    timestamp: int


@dataclass(frozen=True)
class ApiToken:
    token_id: str
    secret: str
    issued_at: int
    expires_at: int
    client_name: str


@dataclass
class IngestResult:
    stored: int
    rejected: list[tuple[int, str]] = field(default_factory=list)


class ManagementStore:
    """Token and client records; deliberately knows nothing about metrics."""

    def __init__(self):
        self._tokens: dict[str, ApiToken] = {}
        self._counter = 0

    def create_token(self, client_name: str, now: int, ttl_s: int) -> ApiToken:
        self._counter += 1
        token = ApiToken(
            token_id=f"tok-{self._counter}",
            secret=f"sec-{self._counter:08d}",
            issued_at=now,
            expires_at=now + ttl_s * US_PER_S,
            client_name=client_name,
        )
        self._tokens[token.secret] = token
        return token

    def lookup(self, secret: str) -> ApiToken | None:
        return self._tokens.get(secret)

    def records(self) -> list[ApiToken]:
        return list(self._tokens.values())


class MetricStore:
    """Per-stream append-only vectors, monotone timestamps per stream."""

    def __init__(self, journal_path: str | Path | None = None):
        self._streams: dict[tuple[str, str], list[tuple[int, float]]] = {}
        self._journal = open(journal_path, "ab") if journal_path else None

    def ingest(self, samples) -> IngestResult:
        result = IngestResult(stored=0)
        for i, s in enumerate(samples):
            reason, duplicate = self._check(s)
            if reason is not None:
                result.rejected.append((i, reason))
                continue
            result.stored += 1
            if duplicate:  # exact duplicate anywhere in the stream: idempotent
                continue
            self._streams.setdefault((s.source, s.metric), []).append(
                (s.timestamp, s.value))
            self._journal_write(s)
        return result

    def _check(self, s) -> tuple[str | None, bool]:
        if not isinstance(s, MetricSample):
            return "malformed: not a MetricSample", False
        if s.metric not in METRICS:
            return f"malformed: unknown metric {s.metric!r}", False
        if not isinstance(s.value, (int, float)) or isinstance(s.value, bool):
            return "malformed: value must be a number", False
        stream = self._streams.get((s.source, s.metric))
        if not stream:
            return None, False
        last_ts, _ = stream[-1]
        if s.timestamp >= last_ts:
            if s.timestamp == last_ts:
                if s.value != stream[-1][1]:
                    return "conflict: same timestamp, different value", False
                return None, True
            return None, False
        idx = bisect.bisect_left(stream, (s.timestamp,))
        if idx < len(stream) and stream[idx][0] == s.timestamp:
            if stream[idx][1] == s.value:
                return None, True
            return "conflict: same timestamp, different value", False
        return "out_of_order: timestamp earlier than stream head", False

    def query(self, source: str, metric: str, t0: int, t1: int, agg: str = "raw"):
        if t0 > t1:
            raise ValueError("t0 must be <= t1")
        stream = self._streams.get((source, metric), [])
        points = [(ts, v) for ts, v in stream if t0 <= ts <= t1]
        if agg == "raw":
            return points
        if not points:
            raise EmptyRange(f"no points for {source}/{metric} in [{t0},{t1}]")
        values = [v for _, v in points]
        if agg == "mean":
            return sum(values) / len(values)
        if agg == "max":
            return max(values)
        if agg == "p95":
            # nearest-rank percentile over the sorted values
            ordered = sorted(values)
            rank = max(1, -(-95 * len(ordered) // 100))  # ceil(0.95 n)
            return ordered[rank - 1]
        raise ValueError(f"unknown aggregation {agg!r}")

    def sources(self) -> list[tuple[str, str]]:
        return sorted(self._streams)

    def stream_len(self, source: str, metric: str) -> int:
        return len(self._streams.get((source, metric), []))

    def _journal_write(self, s: MetricSample) -> None:
        if self._journal is None:
            return
        blob = json.dumps({"source": s.source, "metric": s.metric,
                           "value": s.value, "timestamp": s.timestamp},
                          sort_keys=True).encode()
        self._journal.write(_JOURNAL_LEN.pack(len(blob)) + blob)
        self._journal.flush()

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None


def replay_journal(path: str | Path) -> MetricStore:
    """Rebuild a MetricStore from an append-only journal file."""
    store = MetricStore()
    raw = Path(path).read_bytes()
    offset = 0
    samples = []
    while offset + _JOURNAL_LEN.size <= len(raw):
        (length,) = _JOURNAL_LEN.unpack_from(raw, offset)
        offset += _JOURNAL_LEN.size
        doc = json.loads(raw[offset:offset + length])
        offset += length
        samples.append(MetricSample(**doc))
    store.ingest(samples)
    return store


@dataclass
class SupervisorEvent:
    timestamp: int
    collector_id: str
    kind: str  # started | crashed | restarted


class Collector:
    """Periodic poll task feeding samples into the service."""

    def __init__(self, collector_id: str, source: str, poll_interval_us: int, poll_fn):
        if poll_interval_us <= 0:
            raise ValueError("poll_interval must be positive")
        self.collector_id = collector_id
        self.source = source
        self.poll_interval_us = poll_interval_us
        self.poll_fn = poll_fn
        self.state = "running"
        self.last_poll_at = -1


class TelemetryService:
    """Signup/auth front door plus the collector/supervisor machinery."""

    def __init__(self, clock: SimClock, token_ttl_s: int = DEFAULT_TOKEN_TTL_S,
                 journal_path: str | Path | None = None):
        self.clock = clock
        self.token_ttl_s = token_ttl_s
        self.management = ManagementStore()
        self.metrics = MetricStore(journal_path)
        self.collectors: dict[str, Collector] = {}
        self.events: list[SupervisorEvent] = []
        self._started = False

    # ---- auth ----------------------------------------------------------------

    def signup(self, client_name: str) -> ApiToken:
        token = self.management.create_token(client_name, self.clock.now, self.token_ttl_s)
        log.debug("telemetry signup %s -> %s", client_name, token.token_id)
        return token

    def authenticate(self, secret: str) -> str:
        token = self.management.lookup(secret)
        if token is None:
            return "unknown"
        if self.clock.now >= token.expires_at:
            return "expired"
        return "ok"

    def ingest(self, samples) -> IngestResult:
        return self.metrics.ingest(samples)

    def query(self, secret: str, source: str, metric: str, t0: int, t1: int,
              agg: str = "raw"):
        status = self.authenticate(secret)
        if status != "ok":
            raise AuthRequired(status)
        return self.metrics.query(source, metric, t0, t1, agg)

    # ---- collectors and supervision -----------------------------------------------

    def register_collector(self, collector_id: str, source: str,
                           poll_interval_us: int, poll_fn) -> Collector:
        col = Collector(collector_id, source, poll_interval_us, poll_fn)
        self.collectors[collector_id] = col
        self.events.append(SupervisorEvent(self.clock.now, collector_id, "started"))
        self._schedule_poll(col, self.clock.now)
        self._schedule_watch(col, self.clock.now + poll_interval_us // 2)
        return col

    def _schedule_poll(self, col: Collector, at: int) -> None:
        self.clock.schedule(at, lambda: self._poll(col), label=f"telemetry:poll:{col.collector_id}")

    def _schedule_watch(self, col: Collector, at: int) -> None:
        self.clock.schedule(at, lambda: self._watch(col), label=f"telemetry:watch:{col.collector_id}")

    def _poll(self, col: Collector) -> None:
        if col.state != "running":
            return  # crashed collector stops polling until restarted
        col.last_poll_at = self.clock.now
        samples = col.poll_fn(self.clock.now)
        if samples:
            self.metrics.ingest(samples)
        self._schedule_poll(col, self.clock.now + col.poll_interval_us)

    def _watch(self, col: Collector) -> None:
        if col.collector_id not in self.collectors:
            return
        missed = (col.state == "crashed"
                  or self.clock.now - col.last_poll_at >= 2 * col.poll_interval_us)
        if missed:
            col.state = "crashed"
            self.events.append(SupervisorEvent(self.clock.now, col.collector_id, "crashed"))
            col.state = "running"
            col.last_poll_at = self.clock.now
            self.events.append(SupervisorEvent(self.clock.now, col.collector_id, "restarted"))
            self._schedule_poll(col, self.clock.now)
        self._schedule_watch(col, self.clock.now + col.poll_interval_us)

    def inject_crash(self, collector_id: str, at: int | None = None) -> None:
        col = self.collectors[collector_id]

        def crash():
            if col.state == "running":
                col.state = "crashed"

        self.clock.schedule(at if at is not None else self.clock.now, crash,
                            label=f"telemetry:crash:{collector_id}")
