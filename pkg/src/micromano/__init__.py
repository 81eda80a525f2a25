"""micromano: a miniature NFV management-and-orchestration stack over a
deterministic simulated network.

Subsystems:
  sim        virtual clock, links, packet transmission
  catalog    VNF / network-service descriptors and the service catalogue
  vim        simulated virtual infrastructure managers (open + restricted)
  sdn        switch fabric, MAC learning, static flows, slicing, measurement
  mano       placement, network-service lifecycle, migration, scaling
  telemetry  metric aggregation, token auth, collectors and supervisor
  hag        hybrid access gateway: multipath scheduling and failover
  scenario   scenario files and world assembly
  runner     scripted experiment runs and reports
  api        HTTP control/telemetry API
"""

from micromano.sim import SimClock, Link, Packet, Delivered, Dropped, make_link

__version__ = "0.1.0"

__all__ = [
    "SimClock", "Link", "Packet", "Delivered", "Dropped", "make_link",
    "__version__",
]
