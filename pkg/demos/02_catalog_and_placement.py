#!/usr/bin/env python3
"""Descriptors, the service catalogue, and constraint-driven placement:
edge classes, colocation, and fronthaul latency bounds steering the search."""

import json

from micromano.catalog import Catalogue, parse_descriptor
from micromano.mano import Infeasible, solve_placement


def main():
    cat = Catalogue()
    for doc in [
        {"kind": "vnfd", "version": 1, "id": "upper", "vcpu": 4, "memory_mb": 8192,
         "storage_gb": 20, "lifetime_s": 0, "placement_class": "regional",
         "connection_points": ["fh"]},
        {"kind": "vnfd", "version": 1, "id": "lower", "vcpu": 2, "memory_mb": 4096,
         "storage_gb": 10, "lifetime_s": 0, "placement_class": "edge",
         "connection_points": ["fh"]},
        {"kind": "nsd", "version": 1, "id": "split-ran", "vnfs": ["upper", "lower"],
         "links": [{"id": "fronthaul",
                    "endpoints": [{"vnf_id": "upper", "connection_point": "fh"},
                                  {"vnf_id": "lower", "connection_point": "fh"}],
                    "required_mbps": 1000, "max_latency_us": 2000}]},
    ]:
        cat.register(parse_descriptor(json.dumps(doc)))
    print("catalogue:", json.dumps(cat.list_services(), indent=2))

    def view(vim_id, site_class, vcpu_free):
        return {"vim_id": vim_id, "site_class": site_class,
                "capabilities": {"allocate"},
                "nodes": [{"node_id": "n0", "vcpu_total": 16,
                           "free": {"vcpu": vcpu_free, "memory_mb": 32768,
                                    "storage_gb": 500},
                           "flavor_tags": []}]}

    views = [view("far-core", "regional", 16),
             view("near-core", "regional", 16),
             view("street-edge", "edge", 8)]

    # inter-site latencies: far-core is 6 ms from the edge, near-core 1.5 ms
    lat = {("far-core", "street-edge"): 6000, ("near-core", "street-edge"): 1500,
           ("far-core", "near-core"): 4000}

    def route_latency(a, b):
        if a == b:
            return (), 0
        key = (a, b) if (a, b) in lat else (b, a)
        return (a, b), lat[key]

    vnfds = [cat.vnfds["upper"], cat.vnfds["lower"]]
    links = cat.nsds["split-ran"].links

    assignments, routes = solve_placement(vnfds, views, links=links,
                                          route_latency=route_latency)
    print("\nwith a 2 ms fronthaul bound the search backtracks off far-core:")
    for vnf, (vim, node) in sorted(assignments.items()):
        print(f"  {vnf} -> {vim}/{node}")
    print(f"  fronthaul route latency: {routes['fronthaul'].latency_us} us (bound 2000)")

    # tighten the bound until nothing fits
    from micromano.catalog import VirtualLinkDescriptor
    tight = [VirtualLinkDescriptor(id=l.id, endpoints=l.endpoints,
                                   required_mbps=l.required_mbps,
                                   max_latency_us=1000) for l in links]
    try:
        solve_placement(vnfds, views, links=tight, route_latency=route_latency)
    except Infeasible as exc:
        print(f"\nwith a 1 ms bound: Infeasible -> {exc}")


if __name__ == "__main__":
    main()
