"""Simulated SDN controller and L2 switch fabric.

Switches forward frames either autonomously (MAC learning with aging) or from
controller-installed static flow tables. Per-link deficit-round-robin queues
enforce slice bandwidth guarantees, and active probe/burst measurements yield
latency, jitter, loss and throughput for any endpoint pair.

Topologies are assumed loop-free (no spanning tree is modeled); a hop guard
caps runaway floods.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

from micromano.sim import Delivered, Link, SimClock, US_PER_S, make_link

MAC_AGING_US = 300 * US_PER_S
BROADCAST = "ff:ff:ff:ff:ff:ff"
MAX_HOPS = 32
DRR_QUANTUM_US = 1_000  # quantum equals bytes sendable in this long at the guaranteed rate


class InvalidRule(Exception):
    pass


class PortInUse(Exception):
    pass


class CapacityExceeded(Exception):
    pass


class NoPath(Exception):
    pass


class UnknownEndpoint(Exception):
    pass


@dataclass(frozen=True)
class Frame:
    src_mac: str
    dst_mac: str
    size_bytes: int = 1500
    slice_tag: str | None = None
    frame_id: str | None = None


@dataclass(frozen=True)
class FlowRule:
    rule_id: str
    priority: int
    match: dict
    action: tuple

    MATCH_FIELDS = ("in_port", "src_mac", "dst_mac", "slice_tag")

    def matches(self, frame: Frame, in_port: str) -> bool:
        m = self.match
        if "in_port" in m and m["in_port"] != in_port:
            return False
        if "src_mac" in m and m["src_mac"] != frame.src_mac:
            return False
        if "dst_mac" in m and m["dst_mac"] != frame.dst_mac:
            return False
        if "slice_tag" in m and m["slice_tag"] != frame.slice_tag:
            return False
        return True


@dataclass(frozen=True)
class SliceProfile:
    slice_id: str
    guaranteed_mbps: float
    priority: int = 0
    slice_tag: str | None = None  # defaults to slice_id

    @property
    def tag(self) -> str:
        return self.slice_tag if self.slice_tag is not None else self.slice_id


@dataclass(frozen=True)
class PathMeasurement:
    path: str
    latency_us: float | None
    jitter_us: float | None
    loss_rate: float
    throughput_mbps: float | None
    bandwidth_mbps: float | None
    measured_at: int


@dataclass
class Endpoint:
    endpoint_id: str
    rx: list[tuple[int, Frame]] = field(default_factory=list)


class _Queue:
    __slots__ = ("queue_id", "quantum", "priority", "deficit", "items")

    def __init__(self, queue_id: str, quantum: int, priority: int):
        self.queue_id = queue_id
        self.quantum = quantum
        self.priority = priority
        self.deficit = 0
        self.items: deque = deque()


class Pipe:
    """One direction of a fabric link: DRR service over per-slice queues.

    With only the best-effort queue present this reduces to plain FIFO.
    A packet occupies the link for its serialization time; the next service
    decision happens when serialization completes.
    """

    def __init__(self, clock: SimClock, link: Link):
        self.clock = clock
        self.link = link
        self.queues: dict[str, _Queue] = {}
        self._order: list[_Queue] = []
        self._ptr = 0
        self._fresh = True
        self._busy = False
        self._be = _Queue("", quantum=1 << 30, priority=-(1 << 30))
        self._rebuild_order()

    def add_queue(self, queue_id: str, quantum_bytes: int, priority: int) -> None:
        self.queues[queue_id] = _Queue(queue_id, max(1, quantum_bytes), priority)
        self._rebuild_order()

    def remove_queue(self, queue_id: str) -> None:
        q = self.queues.pop(queue_id, None)
        if q is not None:
            self._be.items.extend(q.items)  # re-home leftovers to best effort
        self._rebuild_order()

    def _rebuild_order(self) -> None:
        slices = sorted(self.queues.values(), key=lambda q: (-q.priority, q.queue_id))
        self._order = slices + [self._be]
        self._ptr = 0
        self._fresh = True
        # recompute best-effort quantum as the unclaimed share of the link
        claimed = sum(q.quantum for q in self.queues.values())
        full = max(1, round(self.link.capacity_mbps * DRR_QUANTUM_US / 8))
        self._be.quantum = max(1, full - claimed)

    def guaranteed_total(self) -> int:
        return sum(q.quantum for q in self.queues.values())

    def send(self, frame: Frame, queue_tag: str | None,
             on_delivered=None, on_dropped=None) -> None:
        q = self.queues.get(queue_tag) if queue_tag is not None else None
        if q is None:
            q = self._be
        q.items.append((frame, on_delivered, on_dropped))
        if not self._busy:
            self._busy = True
            self._serve()

    def _next_item(self):
        if all(not q.items for q in self._order):
            return None
        n = len(self._order)
        while True:
            q = self._order[self._ptr]
            if not q.items:
                q.deficit = 0
                self._advance()
                continue
            if self._fresh:
                q.deficit += q.quantum
                self._fresh = False
            head_size = q.items[0][0].size_bytes
            if q.deficit >= head_size:
                item = q.items.popleft()
                q.deficit -= head_size
                if not q.items:
                    q.deficit = 0
                    self._advance()
                return item
            self._advance()

    def _advance(self) -> None:
        self._ptr = (self._ptr + 1) % len(self._order)
        self._fresh = True

    def _serve(self) -> None:
        while True:
            item = self._next_item()
            if item is None:
                self._busy = False
                return
            frame, on_delivered, on_dropped = item
            outcome = self.link.transmit(frame, self.clock.now)
            if isinstance(outcome, Delivered):
                if on_delivered is not None:
                    at = outcome.at
                    self.clock.schedule(at, lambda cb=on_delivered, t=at: cb(t),
                                        label=f"pipe:{self.link.id}:deliver")
                self.clock.schedule(self.link.busy_until, self._serve,
                                    label=f"pipe:{self.link.id}:serve")
                return
            if on_dropped is not None:
                on_dropped(outcome.reason)
            # dropped at send: no serialization consumed, keep draining


class Switch:
    def __init__(self, switch_id: str, mode: str = "mac_learning"):
        if mode not in ("mac_learning", "static_flows"):
            raise ValueError(f"unknown switch mode {mode}")
        self.switch_id = switch_id
        self.mode = mode
        self.ports: dict[str, tuple] = {}
        self.mac_table: dict[str, tuple[str, int]] = {}
        self.flow_table: list[FlowRule] = []
        self._rule_seq: dict[str, int] = {}
        self._seq = itertools.count()

    def forward(self, frame: Frame, in_port: str, now: int) -> list[tuple[str, str | None]]:
        """Returns (out_port, queue_override) pairs for a frame on in_port."""
        if self.mode == "mac_learning":
            if frame.src_mac != BROADCAST:
                self.mac_table[frame.src_mac] = (in_port, now)
            entry = self.mac_table.get(frame.dst_mac)
            if entry is not None and frame.dst_mac != BROADCAST:
                port, learned_at = entry
                if now - learned_at < MAC_AGING_US and port in self.ports:
                    return [] if port == in_port else [(port, None)]
                del self.mac_table[frame.dst_mac]
            return [(p, None) for p in self.ports if p != in_port]
        for rule in self.flow_table:
            if rule.matches(frame, in_port):
                kind = rule.action[0]
                if kind == "drop":
                    return []
                if kind == "output":
                    return [(rule.action[1], None)]
                if kind == "enqueue":
                    return [(rule.action[1], rule.action[2])]
        return []  # static mode: no match means drop

    def install(self, rule: FlowRule) -> None:
        self._rule_seq[rule.rule_id] = next(self._seq)
        self.flow_table.append(rule)
        # descending priority, ties broken by earliest installation
        self.flow_table.sort(key=lambda r: (-r.priority, self._rule_seq[r.rule_id]))

    def remove(self, rule_id: str) -> None:
        self.flow_table = [r for r in self.flow_table if r.rule_id != rule_id]


class Fabric:
    """Topology container and controller for switches, links and endpoints."""

    def __init__(self, clock: SimClock):
        self.clock = clock
        self.switches: dict[str, Switch] = {}
        self.endpoints: dict[str, Endpoint] = {}
        self.endpoint_loc: dict[str, tuple[str, str]] = {}
        self.links: dict[str, dict] = {}          # logical link id -> info
        self._pipes: dict[tuple[str, str], tuple[Pipe, str, str]] = {}  # (sw, port) -> (pipe, peer_sw, peer_port)
        self.slices: dict[str, dict] = {}
        self._next_rule = itertools.count(1)
        self._next_frame = itertools.count(1)

    # ---- topology -----------------------------------------------------------

    def add_switch(self, switch_id: str, mode: str = "mac_learning") -> Switch:
        if switch_id in self.switches:
            raise ValueError(f"switch {switch_id} already exists")
        sw = Switch(switch_id, mode)
        self.switches[switch_id] = sw
        return sw

    def set_mode(self, mode: str) -> None:
        for sw in self.switches.values():
            if mode not in ("mac_learning", "static_flows"):
                raise ValueError(f"unknown switch mode {mode}")
            sw.mode = mode

    def connect(self, a: str, port_a: str, b: str, port_b: str, *,
                latency_us: int, capacity_mbps: float, jitter_us: int = 0,
                loss_prob: float = 0.0, link_id: str | None = None) -> str:
        link_id = link_id or f"{a}.{port_a}--{b}.{port_b}"
        for sw, port in ((a, port_a), (b, port_b)):
            if port in self.switches[sw].ports:
                raise PortInUse(f"{sw}:{port} already attached")
        fwd = make_link(self.clock, f"{link_id}>", latency_us, capacity_mbps, jitter_us, loss_prob)
        rev = make_link(self.clock, f"{link_id}<", latency_us, capacity_mbps, jitter_us, loss_prob)
        self._pipes[(a, port_a)] = (Pipe(self.clock, fwd), b, port_b)
        self._pipes[(b, port_b)] = (Pipe(self.clock, rev), a, port_a)
        self.switches[a].ports[port_a] = ("link", link_id)
        self.switches[b].ports[port_b] = ("link", link_id)
        self.links[link_id] = {
            "a": (a, port_a), "b": (b, port_b), "up": True,
            "latency_us": latency_us, "capacity_mbps": capacity_mbps,
        }
        return link_id

    def set_link_up(self, link_id: str, up: bool) -> None:
        info = self.links[link_id]
        info["up"] = up
        for end in ("a", "b"):
            pipe, _, _ = self._pipes[info[end]]
            pipe.link.up = up

    def hot_plug(self, switch_id: str, port: str, endpoint_id: str) -> Endpoint:
        sw = self.switches[switch_id]
        if port in sw.ports:
            raise PortInUse(f"{switch_id}:{port} already attached")
        if endpoint_id in self.endpoints:
            raise ValueError(f"endpoint {endpoint_id} already exists")
        ep = Endpoint(endpoint_id)
        sw.ports[port] = ("endpoint", endpoint_id)
        self.endpoints[endpoint_id] = ep
        self.endpoint_loc[endpoint_id] = (switch_id, port)
        return ep

    def endpoint_switch(self, endpoint_id: str) -> str:
        if endpoint_id not in self.endpoint_loc:
            raise UnknownEndpoint(endpoint_id)
        return self.endpoint_loc[endpoint_id][0]

    # ---- flow control ---------------------------------------------------------

    def install_flow(self, switch_id: str, *, priority: int, match: dict, action: tuple) -> str:
        sw = self.switches[switch_id]
        if not match or not set(match) <= set(FlowRule.MATCH_FIELDS):
            raise InvalidRule(f"match must use fields from {FlowRule.MATCH_FIELDS}")
        kind = action[0] if action else None
        if kind == "output" or kind == "enqueue":
            if action[1] not in sw.ports:
                raise InvalidRule(f"action references unknown port {action[1]}")
        elif kind != "drop":
            raise InvalidRule(f"unknown action {action!r}")
        rule_id = f"fr-{next(self._next_rule)}"
        sw.install(FlowRule(rule_id=rule_id, priority=priority, match=dict(match), action=action))
        return rule_id

    def remove_flow(self, switch_id: str, rule_id: str) -> None:
        self.switches[switch_id].remove(rule_id)

    # ---- slicing ---------------------------------------------------------------

    def apply_slice(self, profile: SliceProfile, path: list[str]) -> list[tuple[str, str]]:
        """Install the slice's queue on every directional pipe along ``path``
        (an ordered switch list). Fails atomically on capacity or dead links."""
        pipes = self._path_pipes(path)
        quantum = max(1, round(profile.guaranteed_mbps * DRR_QUANTUM_US / 8))
        for pipe in pipes:
            if not pipe.link.up:
                raise NoPath(f"link {pipe.link.id} is down")
            full = max(1, round(pipe.link.capacity_mbps * DRR_QUANTUM_US / 8))
            if pipe.guaranteed_total() + quantum > full:
                raise CapacityExceeded(
                    f"slice {profile.slice_id}: {profile.guaranteed_mbps} Mbps does not fit "
                    f"link {pipe.link.id}")
        installed = []
        for pipe in pipes:
            pipe.add_queue(profile.tag, quantum, profile.priority)
            installed.append((pipe.link.id, profile.tag))
        self.slices[profile.slice_id] = {"profile": profile, "pipes": pipes}
        return installed

    def remove_slice(self, slice_id: str) -> None:
        entry = self.slices.pop(slice_id, None)
        if entry is None:
            return
        for pipe in entry["pipes"]:
            pipe.remove_queue(entry["profile"].tag)

    def _path_pipes(self, path: list[str]) -> list[Pipe]:
        pipes = []
        for a, b in zip(path, path[1:]):
            found = None
            for (sw, port), (pipe, peer_sw, _) in self._pipes.items():
                if sw == a and peer_sw == b:
                    found = pipe
                    break
            if found is None:
                raise NoPath(f"no link between {a} and {b}")
            pipes.append(found)
        return pipes

    # ---- frame propagation ------------------------------------------------------

    def send(self, src_endpoint: str, dst_mac: str, size_bytes: int = 1500,
             slice_tag: str | None = None, on_delivered=None, on_dropped=None,
             on_resolved=None) -> str:
        """Inject a frame from an endpoint. ``on_delivered(endpoint_id, at)``
        fires per endpoint delivery (floods deliver several copies);
        ``on_dropped(reason)`` fires once when no copy reached any endpoint;
        ``on_resolved(deliveries)`` fires once when every copy is accounted."""
        if src_endpoint not in self.endpoint_loc:
            raise UnknownEndpoint(src_endpoint)
        frame = Frame(src_mac=src_endpoint, dst_mac=dst_mac, size_bytes=size_bytes,
                      slice_tag=slice_tag, frame_id=f"f{next(self._next_frame)}")
        fate = _Fate(on_delivered, on_dropped, on_resolved)
        sw, port = self.endpoint_loc[src_endpoint]
        self.clock.schedule(self.clock.now,
                            lambda: self._arrive(sw, port, frame, fate, hops=0),
                            label=f"sdn:inject:{frame.frame_id}")
        return frame.frame_id

    def _arrive(self, switch_id: str, in_port: str, frame: Frame, fate: _Fate, hops: int) -> None:
        if hops > MAX_HOPS:
            fate.consume_drop("hop_limit")
            return
        sw = self.switches[switch_id]
        outs = sw.forward(frame, in_port, self.clock.now)
        if not outs:
            fate.consume_drop("no_output")
            return
        fate.outstanding += len(outs) - 1
        for out_port, queue_override in outs:
            kind, ref = sw.ports[out_port]
            if kind == "endpoint":
                self.endpoints[ref].rx.append((self.clock.now, frame))
                fate.consume_deliver(ref, self.clock.now)
            else:
                pipe, peer_sw, peer_port = self._pipes[(switch_id, out_port)]
                tag = queue_override if queue_override is not None else frame.slice_tag
                pipe.send(
                    frame, tag,
                    on_delivered=lambda at, s=peer_sw, p=peer_port: self._arrive(
                        s, p, frame, fate, hops + 1),
                    on_dropped=fate.consume_drop,
                )

    # ---- reachability and routing -------------------------------------------------

    def reachable(self, src_endpoint: str, dst_endpoint: str) -> bool:
        try:
            a = self.endpoint_switch(src_endpoint)
            b = self.endpoint_switch(dst_endpoint)
        except UnknownEndpoint:
            return False
        return self.shortest_path(a, b) is not None

    def shortest_path(self, src_switch: str, dst_switch: str) -> tuple[list[str], int] | None:
        """Dijkstra by propagation latency over up links; None when unreachable."""
        import heapq
        if src_switch not in self.switches or dst_switch not in self.switches:
            return None
        dist = {src_switch: 0}
        prev: dict[str, str] = {}
        heap = [(0, src_switch)]
        seen = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in seen:
                continue
            seen.add(u)
            if u == dst_switch:
                break
            for (sw, port), (pipe, peer, _) in self._pipes.items():
                if sw != u or not pipe.link.up:
                    continue
                nd = d + pipe.link.latency_us
                if peer not in dist or nd < dist[peer]:
                    dist[peer] = nd
                    prev[peer] = u
                    heapq.heappush(heap, (nd, peer))
        if dst_switch not in seen:
            return None
        path = [dst_switch]
        while path[-1] != src_switch:
            path.append(prev[path[-1]])
        path.reverse()
        return path, dist[dst_switch]

    def path_bandwidth(self, path: list[str]) -> float:
        return min(p.link.capacity_mbps for p in self._path_pipes(path)) if len(path) > 1 else float("inf")

    # ---- measurement -----------------------------------------------------------------

    def start_measurement(self, src: str, dst: str, *, n_probes: int = 20,
                          probe_size: int = 100, probe_gap_us: int = 10_000,
                          burst_s: float = 1.0, burst_size: int = 1400,
                          on_done=None) -> "Measurement":
        if src not in self.endpoint_loc or dst not in self.endpoint_loc:
            raise UnknownEndpoint(f"{src} or {dst}")
        if not self.reachable(src, dst):
            raise NoPath(f"{src} -> {dst}")
        m = Measurement(self, src, dst, n_probes, probe_size, probe_gap_us,
                        burst_s, burst_size, on_done)
        m.start()
        return m

    def measure(self, src: str, dst: str, **kw) -> PathMeasurement:
        """Synchronous measurement: drives the clock until probing completes.
        Only valid outside the event loop (tests, scripts)."""
        m = self.start_measurement(src, dst, **kw)
        while not m.done:
            at = self.clock.next_event_at()
            if at is None:
                raise RuntimeError("measurement did not complete")
            self.clock.advance(at)
        return m.result


class _Fate:
    """Tracks every copy of a (possibly flooded) frame until all copies have
    reached an endpoint or died. ``on_delivered(ep, at)`` fires per endpoint
    delivery; ``on_dropped(reason)`` fires once if no endpoint ever got a
    copy; ``on_resolved([(ep, at), ...])`` fires exactly once at the end."""

    __slots__ = ("outstanding", "deliveries", "on_delivered", "on_dropped",
                 "on_resolved", "drop_reason")

    def __init__(self, on_delivered, on_dropped, on_resolved=None):
        self.outstanding = 1
        self.deliveries: list[tuple[str, int]] = []
        self.on_delivered = on_delivered
        self.on_dropped = on_dropped
        self.on_resolved = on_resolved
        self.drop_reason = "no_output"

    def consume_deliver(self, endpoint_id: str, at: int) -> None:
        self.deliveries.append((endpoint_id, at))
        if self.on_delivered is not None:
            self.on_delivered(endpoint_id, at)
        self._consume()

    def consume_drop(self, reason: str) -> None:
        self.drop_reason = reason
        self._consume()

    def _consume(self) -> None:
        self.outstanding -= 1
        if self.outstanding != 0:
            return
        if not self.deliveries and self.on_dropped is not None:
            self.on_dropped(self.drop_reason)
        if self.on_resolved is not None:
            self.on_resolved(list(self.deliveries))


class Measurement:
    """Active path measurement: spaced probes for latency/jitter/loss, then a
    saturating closed-loop burst for throughput. Event-driven; completion is
    observable via ``done`` / ``result`` or the ``on_done`` callback."""

    WINDOW = 64

    def __init__(self, fabric: Fabric, src: str, dst: str, n_probes: int,
                 probe_size: int, probe_gap_us: int, burst_s: float,
                 burst_size: int, on_done):
        self.fabric = fabric
        self.src = src
        self.dst = dst
        self.n_probes = n_probes
        self.probe_size = probe_size
        self.probe_gap_us = probe_gap_us
        self.burst_s = burst_s
        self.burst_size = burst_size
        self.on_done = on_done
        self.done = False
        self.result: PathMeasurement | None = None
        self._delays: list[int] = []
        self._probe_resolved = 0
        self._burst_started = False
        self._burst_start_at = 0
        self._burst_end = 0
        self._burst_in_flight = 0
        self._burst_delivered_bytes = 0
        self._burst_last_at = 0

    def start(self) -> None:
        clock = self.fabric.clock
        for i in range(self.n_probes):
            clock.schedule(clock.now + i * self.probe_gap_us, self._send_probe,
                           label="measure:probe")

    def _send_probe(self) -> None:
        sent_at = self.fabric.clock.now
        self.fabric.send(
            self.src, self.dst, size_bytes=self.probe_size,
            on_resolved=lambda deliveries: self._probe_done(deliveries, sent_at),
        )

    def _probe_done(self, deliveries, sent_at) -> None:
        arrival = next((at for ep, at in deliveries if ep == self.dst), None)
        if arrival is not None:
            self._delays.append(arrival - sent_at)
        self._probe_resolved += 1
        if self._probe_resolved == self.n_probes:
            if self.burst_s > 0:
                self._start_burst()
            else:
                self._finish()

    def _start_burst(self) -> None:
        clock = self.fabric.clock
        self._burst_started = True
        self._burst_start_at = clock.now
        self._burst_end = clock.now + round(self.burst_s * US_PER_S)
        for _ in range(self.WINDOW):
            self._burst_send()

    def _burst_send(self) -> None:
        if self.fabric.clock.now >= self._burst_end:
            if self._burst_in_flight == 0:
                self._finish()
            return
        self._burst_in_flight += 1
        self.fabric.send(
            self.src, self.dst, size_bytes=self.burst_size,
            on_resolved=self._burst_resolved,
        )

    def _burst_resolved(self, deliveries) -> None:
        arrival = next((at for ep, at in deliveries if ep == self.dst), None)
        if arrival is not None:
            self._burst_delivered_bytes += self.burst_size
            self._burst_last_at = max(self._burst_last_at, arrival)
        self._burst_in_flight -= 1
        self._burst_send()
        if self._burst_in_flight == 0 and self.fabric.clock.now >= self._burst_end:
            self._finish()

    def _finish(self) -> None:
        if self.done:
            return
        self.done = True
        delays = self._delays
        latency = sum(delays) / len(delays) if delays else None
        jitter = (sum(abs(d - latency) for d in delays) / len(delays)) if delays else None
        loss = 1.0 - len(delays) / self.n_probes if self.n_probes else 0.0
        throughput = None
        if self._burst_started and self._burst_delivered_bytes and self._burst_last_at > self._burst_start_at:
            throughput = self._burst_delivered_bytes * 8 / (self._burst_last_at - self._burst_start_at)
        src_sw = self.fabric.endpoint_switch(self.src)
        dst_sw = self.fabric.endpoint_switch(self.dst)
        bandwidth = None
        route = self.fabric.shortest_path(src_sw, dst_sw)
        if route is not None and len(route[0]) > 1:
            bandwidth = self.fabric.path_bandwidth(route[0])
        self.result = PathMeasurement(
            path=f"{self.src}->{self.dst}",
            latency_us=latency, jitter_us=jitter, loss_rate=loss,
            throughput_mbps=throughput, bandwidth_mbps=bandwidth,
            measured_at=self.fabric.clock.now,
        )
        if self.on_done is not None:
            self.on_done(self.result)
