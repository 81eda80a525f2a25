#!/usr/bin/env python3
"""Walk through the discrete-event substrate: virtual time, scheduled events,
and packet transmission over lossy, jittery, rate-limited links."""

from micromano.sim import Packet, SimClock, US_PER_MS, make_link


def main():
    clock = SimClock(seed=2026)
    print(f"virtual time starts at {clock.now} us")

    clock.schedule(5 * US_PER_MS, lambda: print(f"  [{clock.now} us] hello from an event"))
    clock.schedule(5 * US_PER_MS, lambda: print(f"  [{clock.now} us] same-time events fire in order"))
    clock.advance(10 * US_PER_MS)
    print(f"advanced to {clock.now} us\n")

    # a clean 100 Mbps link: delivery = serialization + propagation
    clean = make_link(clock, "clean", latency_us=10 * US_PER_MS, capacity_mbps=100)
    out = clean.transmit(Packet(seq=0, size_bytes=1250, src="a", dst="b"), clock.now)
    print(f"1250 B over 100 Mbps with 10 ms latency -> delivered at +"
          f"{out.at - clock.now} us (100 us serialization + 10 ms propagation)")

    # a lossy one: outcomes are drawn from a per-link substream of the seed
    lossy = make_link(clock, "lossy", latency_us=1_000, capacity_mbps=100,
                      jitter_us=500, loss_prob=0.3)
    outcomes = [type(lossy.transmit(Packet(seq=i, size_bytes=500, src="a", dst="b"),
                                    clock.now)).__name__
                for i in range(12)]
    print(f"12 sends over a 30%-loss link: {outcomes}")
    print(f"counters: transmitted={lossy.transmitted} delivered={lossy.delivered} "
          f"dropped={lossy.dropped}")

    # back-to-back sends queue behind each other (serialization occupancy)
    fifo = make_link(clock, "fifo", latency_us=1_000, capacity_mbps=10)
    times = [fifo.transmit(Packet(seq=i, size_bytes=1250, src="a", dst="b"),
                           clock.now).at
             for i in range(4)]
    print(f"4 back-to-back 1250 B packets on a 10 Mbps link arrive at {times}")
    print("(1 ms apart: each occupies the link for its 1 ms serialization)")

    # same seed, same schedule, same trace
    def trace(seed):
        c = SimClock(seed=seed)
        l = make_link(c, "x", latency_us=100, capacity_mbps=10, loss_prob=0.5)
        return [type(l.transmit(Packet(seq=i, size_bytes=100, src="a", dst="b"), 0)).__name__
                for i in range(8)]

    print(f"\nseed 1 twice: {trace(1)} == {trace(1)} -> replayable")
    print(f"seed 2:       {trace(2)}")


if __name__ == "__main__":
    main()
