#!/usr/bin/env python3
"""The hybrid access gateway aggregating one byte stream over heterogeneous
access paths, and surviving a path failure mid-transfer."""

from micromano.hag import AccessPath, HagSession
from micromano.sim import SimClock, US_PER_MS, US_PER_S, make_link


def paths(clock):
    return [
        AccessPath("5g-28ghz", "5g_28ghz",
                   make_link(clock, "28ghz", latency_us=1000, capacity_mbps=1000)),
        AccessPath("5g-3500", "5g_3500mhz",
                   make_link(clock, "3500", latency_us=3000, capacity_mbps=400)),
        AccessPath("wifi", "wifi",
                   make_link(clock, "wifi", latency_us=8000, capacity_mbps=100,
                             loss_prob=0.01)),
        AccessPath("4g-700", "4g_700mhz",
                   make_link(clock, "lte", latency_us=15000, capacity_mbps=30)),
    ]


def main():
    for policy in ("round_robin", "min_rtt", "weighted_capacity"):
        clock = SimClock(seed=99)
        session = HagSession(clock, f"ue-{policy}", paths(clock), policy)
        session.send(20_000_000)  # 20 MB
        clock.run_until_idle(max_time=30 * US_PER_S)
        stats = session.stats()
        split = {pid: p["segments_sent"] for pid, p in stats["paths"].items()}
        print(f"{policy:18s} goodput {stats['goodput_mbps']:8.1f} Mbps  "
              f"split {split}  retx "
              f"{sum(p['retransmits'] for p in stats['paths'].values())}")

    # failover: kill the best path mid-transfer
    clock = SimClock(seed=100)
    session = HagSession(clock, "ue-failover", paths(clock), "weighted_capacity")
    session.send(20_000_000)
    clock.schedule(60 * US_PER_MS,
                   lambda: session.on_path_event("5g-28ghz", "down"))
    clock.run_until_idle(max_time=30 * US_PER_S)
    order = [seq for _, seq, _ in session.delivered_events]
    print(f"\nkilled 5g-28ghz at 60 ms: delivered {session.delivered_bytes} of "
          f"{session.total_sent_bytes} bytes, in order: {order == sorted(order)}, "
          f"duplicates: {len(order) != len(set(order))}")
    print("per-path:", {pid: p["segments_sent"]
                        for pid, p in session.stats()["paths"].items()})


if __name__ == "__main__":
    main()
