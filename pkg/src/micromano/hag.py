"""Hybrid access gateway: one reliable byte stream scheduled over several
heterogeneous access paths.

Each subflow behaves as a reliable ordered channel: segments lost on a path
are retransmitted after RTO = 2 x srtt, the per-path window is the path's
bandwidth-delay product, and the receiver's reorder buffer releases bytes
strictly in sequence order exactly once. Path selection policies: round_robin,
min_rtt, weighted_capacity.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from micromano.sim import Delivered, Link, Packet, SimClock

MSS = 1400
SRTT_GAIN = 0.125  # EWMA gain per acknowledged segment

POLICIES = ("round_robin", "min_rtt", "weighted_capacity")
TECHNOLOGIES = ("5g_3500mhz", "5g_28ghz", "4g_700mhz", "wifi")


class NoPathsUp(Exception):
    pass


class SessionClosed(Exception):
    pass


class AllWindowsFull(Exception):
    pass


@dataclass
class AccessPath:
    path_id: str
    technology: str
    link: Link
    srtt_us: float = 0.0
    up: bool = True
    in_flight: int = 0
    segments_sent: int = 0
    bytes_acked: int = 0
    retransmits: int = 0
    stride_pass: float = 0.0

    def __post_init__(self):
        if self.technology not in TECHNOLOGIES:
            raise ValueError(f"unknown access technology {self.technology}")
        if self.srtt_us <= 0:
            self.srtt_us = 2.0 * max(1, self.link.latency_us)

    def rto_us(self) -> int:
        return max(1, round(2 * self.srtt_us))

    def window_segments(self) -> int:
        # bandwidth-delay product in segments, recomputed as srtt moves
        bdp_bytes = self.link.capacity_mbps * self.srtt_us / 8
        return max(1, int(bdp_bytes // MSS))

    def has_space(self) -> bool:
        return self.up and self.in_flight < self.window_segments()


@dataclass
class Segment:
    seq: int
    size_bytes: int
    path_id: str | None = None
    sent_at: int = 0
    state: str = "queued"  # queued | inflight
    timer_id: int | None = None
    delivery_id: int | None = None
    retx_count: int = 0


class HagSession:
    """Sender+receiver pair for one aggregated stream over multiple paths."""

    def __init__(self, clock: SimClock, session_id: str, paths: list[AccessPath],
                 policy: str = "round_robin"):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy}")
        if not paths:
            raise NoPathsUp("session needs at least one path")
        if not any(p.up for p in paths):
            raise NoPathsUp("all paths down")
        self.clock = clock
        self.session_id = session_id
        self.paths: dict[str, AccessPath] = {p.path_id: p for p in paths}
        self._path_order = [p.path_id for p in paths]
        self.policy = policy
        self.closed = False
        self.next_seq = 0
        self._rr_ptr = 0
        self.pending: dict[int, Segment] = {}
        self._queue: deque[int] = deque()  # seq numbers awaiting (re)transmission
        # receiver side
        self.expected_seq = 0
        self._reorder: dict[int, int] = {}  # seq -> size
        self.delivered_bytes = 0
        self.delivered_events: list[tuple[int, int, int]] = []  # (at, seq, size)
        self.total_sent_bytes = 0
        self.first_send_at: int | None = None

    # ---- sending ------------------------------------------------------------

    def send(self, byte_count: int) -> list[Segment]:
        """Segment a byte count at MSS and queue everything for transmission."""
        if self.closed:
            raise SessionClosed(self.session_id)
        if byte_count <= 0:
            raise ValueError("byte_count must be positive")
        if self.first_send_at is None:
            self.first_send_at = self.clock.now
        segments = []
        remaining = byte_count
        while remaining > 0:
            size = min(MSS, remaining)
            seg = Segment(seq=self.next_seq, size_bytes=size)
            self.pending[seg.seq] = seg
            self._queue.append(seg.seq)
            segments.append(seg)
            self.next_seq += 1
            remaining -= size
        self.total_sent_bytes += byte_count
        self.pump()
        return segments

    def select_path(self, segment: Segment) -> str:
        """Pick the next path per policy among up paths with window space."""
        candidates = [self.paths[pid] for pid in self._path_order
                      if self.paths[pid].has_space()]
        if not candidates:
            raise AllWindowsFull(self.session_id)
        if self.policy == "round_robin":
            n = len(self._path_order)
            for i in range(n):
                pid = self._path_order[(self._rr_ptr + i) % n]
                if self.paths[pid].has_space():
                    self._rr_ptr = (self._rr_ptr + i + 1) % n
                    return pid
        if self.policy == "min_rtt":
            return min(candidates, key=lambda p: (p.srtt_us, p.path_id)).path_id
        # weighted_capacity: stride scheduling with pass increments of 1/weight,
        # weight proportional to capacity_mbps / srtt_us
        best = min(candidates, key=lambda p: (p.stride_pass, p.path_id))
        weight = best.link.capacity_mbps / best.srtt_us
        best.stride_pass += 1.0 / weight
        return best.path_id

    def pump(self) -> None:
        """Transmit queued segments while some path has window space."""
        while self._queue:
            seq = self._queue[0]
            seg = self.pending.get(seq)
            if seg is None or seg.state != "queued":
                self._queue.popleft()
                continue
            try:
                pid = self.select_path(seg)
            except AllWindowsFull:
                return
            self._queue.popleft()
            self._transmit(seg, self.paths[pid])

    def _transmit(self, seg: Segment, path: AccessPath) -> None:
        now = self.clock.now
        seg.state = "inflight"
        seg.path_id = path.path_id
        seg.sent_at = now
        path.in_flight += 1
        path.segments_sent += 1
        pkt = Packet(seq=seg.seq, size_bytes=seg.size_bytes,
                     src=self.session_id, dst=path.path_id, sent_at=now)
        outcome = path.link.transmit(pkt, now)
        if isinstance(outcome, Delivered):
            seg.delivery_id = self.clock.schedule(
                outcome.at, lambda: self._data_arrives(seg.seq, path.path_id),
                label=f"hag:{self.session_id}:data:{seg.seq}")
        else:
            seg.delivery_id = None
        seg.timer_id = self.clock.schedule(
            now + path.rto_us(), lambda: self._on_timeout(seg.seq),
            label=f"hag:{self.session_id}:rto:{seg.seq}")

    # ---- receiver -------------------------------------------------------------

    def _data_arrives(self, seq: int, path_id: str) -> None:
        now = self.clock.now
        seg = self.pending.get(seq)
        if seg is not None and seq >= self.expected_seq and seq not in self._reorder:
            self._reorder[seq] = seg.size_bytes
            self._release_in_order(now)
        # ack returns on the same path after its one-way latency
        path = self.paths[path_id]
        self.clock.schedule(now + path.link.latency_us,
                            lambda: self._on_ack(seq, path_id),
                            label=f"hag:{self.session_id}:ack:{seq}")

    def _release_in_order(self, now: int) -> None:
        while self.expected_seq in self._reorder:
            size = self._reorder.pop(self.expected_seq)
            self.delivered_bytes += size
            self.delivered_events.append((now, self.expected_seq, size))
            self.expected_seq += 1

    # ---- acks and loss -----------------------------------------------------------

    def _on_ack(self, seq: int, path_id: str) -> None:
        seg = self.pending.pop(seq, None)
        if seg is None:
            return  # duplicate ack for an already-acked segment
        if seg.timer_id is not None:
            self.clock.cancel(seg.timer_id)
        if seg.state == "inflight":
            path = self.paths[seg.path_id]
            path.in_flight -= 1
            path.bytes_acked += seg.size_bytes
            if seg.retx_count == 0:
                rtt = self.clock.now - seg.sent_at
                path.srtt_us += SRTT_GAIN * (rtt - path.srtt_us)
        self.pump()

    def _on_timeout(self, seq: int) -> None:
        seg = self.pending.get(seq)
        if seg is None or seg.state != "inflight":
            return
        path = self.paths[seg.path_id]
        path.in_flight -= 1
        path.retransmits += 1
        if seg.delivery_id is not None:
            self.clock.cancel(seg.delivery_id)
            seg.delivery_id = None
        seg.state = "queued"
        seg.retx_count += 1
        self._queue.appendleft(seq)
        self.pump()

    # ---- path events ----------------------------------------------------------------

    def on_path_event(self, path_id: str, event: str) -> None:
        if path_id not in self.paths:
            raise KeyError(f"no path {path_id} in session {self.session_id}")
        path = self.paths[path_id]
        if event == "up":
            path.up = True
            path.link.up = True
            self.pump()
            return
        if event != "down":
            raise ValueError(f"unknown path event {event}")
        path.up = False
        path.link.up = False
        # in-flight segments on the dead path are lost: cancel their delivery
        # and timers, requeue in sequence order ahead of fresh data
        stranded = sorted(
            (seg for seg in self.pending.values()
             if seg.state == "inflight" and seg.path_id == path_id),
            key=lambda s: s.seq)
        for seg in stranded:
            if seg.delivery_id is not None:
                self.clock.cancel(seg.delivery_id)
                seg.delivery_id = None
            if seg.timer_id is not None:
                self.clock.cancel(seg.timer_id)
                seg.timer_id = None
            seg.state = "queued"
            seg.retx_count += 1
            path.in_flight -= 1
        self._queue.extendleft(seg.seq for seg in reversed(stranded))
        self.pump()

    def close(self) -> None:
        self.closed = True

    # ---- introspection ---------------------------------------------------------------

    def all_delivered(self) -> bool:
        return not self.pending and not self._queue

    def up_paths(self) -> list[str]:
        return [pid for pid in self._path_order if self.paths[pid].up]

    def stats(self) -> dict:
        per_path = {}
        for pid in self._path_order:
            p = self.paths[pid]
            per_path[pid] = {
                "technology": p.technology,
                "up": p.up,
                "srtt_us": round(p.srtt_us, 1),
                "segments_sent": p.segments_sent,
                "bytes_acked": p.bytes_acked,
                "retransmits": p.retransmits,
                "in_flight": p.in_flight,
            }
        elapsed = 0
        if self.delivered_events and self.first_send_at is not None:
            elapsed = self.delivered_events[-1][0] - self.first_send_at
        goodput = (self.delivered_bytes * 8 / elapsed) if elapsed > 0 else 0.0
        reorder_delay = self._mean_reordering_delay()
        return {
            "session_id": self.session_id,
            "policy": self.policy,
            "paths": per_path,
            "delivered_bytes": self.delivered_bytes,
            "total_sent_bytes": self.total_sent_bytes,
            "goodput_mbps": round(goodput, 3),
            "reordering_delay_us": reorder_delay,
        }

    def _mean_reordering_delay(self) -> float:
        # gap between a segment's release and the release of its predecessor
        if len(self.delivered_events) < 2:
            return 0.0
        gaps = [b[0] - a[0] for a, b in zip(self.delivered_events, self.delivered_events[1:])]
        return round(sum(gaps) / len(gaps), 1)


def open_session(clock: SimClock, paths: list[AccessPath], policy: str = "round_robin",
                 session_id: str = "hag-0") -> HagSession:
    return HagSession(clock, session_id, paths, policy)
