#!/usr/bin/env python3
"""Telemetry in isolation: tokens with expiry, time-series ingest and query,
and the supervisor restarting a crashed collector."""

from micromano.sim import SimClock, US_PER_S
from micromano.telemetry import AuthRequired, MetricSample, TelemetryService


def main():
    clock = SimClock(seed=5)
    svc = TelemetryService(clock, token_ttl_s=120)

    token = svc.signup("demo-console")
    print(f"signed up: token {token.token_id}, expires at "
          f"{token.expires_at / US_PER_S:.0f} s virtual")

    counter = {"n": 0}

    def poll(now):
        counter["n"] += 1
        return [MetricSample("sdn:demo-path", "latency_us",
                             4000 + 10 * (counter["n"] % 7), now)]

    svc.register_collector("col-demo", "sdn:demo-path", US_PER_S, poll)
    svc.inject_crash("col-demo", at=20 * US_PER_S)
    clock.advance(60 * US_PER_S)

    points = svc.query(token.secret, "sdn:demo-path", "latency_us",
                       0, clock.now, "raw")
    mean = svc.query(token.secret, "sdn:demo-path", "latency_us",
                     0, clock.now, "mean")
    p95 = svc.query(token.secret, "sdn:demo-path", "latency_us",
                    0, clock.now, "p95")
    print(f"{len(points)} points over 60 s, mean {mean:.1f} us, p95 {p95:.1f} us")

    print("supervisor log:")
    for e in svc.events:
        print(f"  [{e.timestamp / US_PER_S:5.1f} s] {e.collector_id}: {e.kind}")
    gaps = [b[0] - a[0] for a, b in zip(points, points[1:])]
    print(f"largest sample gap across the crash: {max(gaps) / US_PER_S:.1f} s "
          f"(poll interval 1 s)")

    clock.advance(121 * US_PER_S)
    try:
        svc.query(token.secret, "sdn:demo-path", "latency_us", 0, clock.now, "mean")
    except AuthRequired as exc:
        print(f"\nafter the TTL the same token is refused: {exc}")


if __name__ == "__main__":
    main()
