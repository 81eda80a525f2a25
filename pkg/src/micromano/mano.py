"""Orchestration layer: placement across VIMs, network-service lifecycle,
configuration primitives, migration, scaling, and flow/slice coordination.

Placement is a deterministic depth-first search in heuristic order: VNFs by
descending vCPU, candidate VIMs by lowest current utilization (ties by
vim_id), nodes first-fit by node_id, with full backtracking on capacity,
colocation and route-latency failures. At desk scale the search is complete,
so feasibility answers coincide with exhaustive search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from micromano.catalog import Catalogue, NsDescriptor, VnfDescriptor
from micromano.events import EventLog
from micromano.sdn import CapacityExceeded, Fabric, NoPath, SliceProfile
from micromano.sim import SimClock, US_PER_S
from micromano.vim import SessionExpired, Vim, VimError

log = logging.getLogger(__name__)

NS_STATES = ("created", "instantiating", "configuring", "running", "scaling",
             "migrating", "terminating", "terminated", "failed")
TERMINAL_STATES = ("terminated", "failed")

LEGAL_TRANSITIONS = {
    "created": {"instantiating", "failed"},
    "instantiating": {"configuring", "failed"},
    "configuring": {"running", "failed"},
    "running": {"scaling", "migrating", "terminating", "failed"},
    "scaling": {"running", "failed"},
    "migrating": {"running", "terminating", "failed"},
    "terminating": {"terminated", "failed"},
    "terminated": set(),
    "failed": set(),
}


class Infeasible(Exception):
    def __init__(self, constraint: str):
        self.constraint = constraint
        super().__init__(constraint)


class PrimitiveFailed(Exception):
    pass


class LifecycleError(Exception):
    pass


@dataclass(frozen=True)
class Route:
    path: tuple[str, ...]
    latency_us: int


@dataclass
class PlacementPlan:
    nsd_id: str
    assignments: dict[str, tuple[str, str]]       # vnf_id -> (vim_id, node_id)
    link_routes: dict[str, Route] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "nsd_id": self.nsd_id,
            "assignments": {v: list(a) for v, a in sorted(self.assignments.items())},
            "link_routes": {
                l: {"path": list(r.path), "latency_us": r.latency_us}
                for l, r in sorted(self.link_routes.items())
            },
        }


@dataclass
class NsInstance:
    instance_id: str
    nsd_id: str
    state: str = "created"
    plan: PlacementPlan | None = None
    vm_records: dict[str, tuple[str, str]] = field(default_factory=dict)  # key -> (vim_id, vm_id)
    installed_rules: list[tuple[str, str]] = field(default_factory=list)  # (switch_id, rule_id)
    installed_slices: list[str] = field(default_factory=list)
    started_at: int | None = None
    replicas: dict[str, int] = field(default_factory=dict)
    pending_migration: dict | None = None
    last_error: str | None = None
    transitions: list[tuple[str, str, int]] = field(default_factory=list)


def solve_placement(vnfds: list[VnfDescriptor], vim_views: list[dict],
                    links=(), same_vim=(), different_vim=(),
                    route_latency=None, capability_requirements=None):
    """Assign each VNF to a (vim, node) honoring capacities, placement
    classes, capability requirements, colocation, and per-link latency bounds.

    ``vim_views`` entries: {vim_id, site_class, capabilities: set, nodes:
    [{node_id, flavor_tags, vcpu_total/free, memory_mb free, storage_gb
    free}], utilization}. ``route_latency(vim_a, vim_b)`` returns
    (path, latency_us) or None when unroutable; defaults to colocated-zero.

    Returns (assignments, link_routes); raises Infeasible naming the first
    violated constraint encountered.
    """
    if route_latency is None:
        route_latency = lambda a, b: ((), 0)
    capability_requirements = capability_requirements or {}

    order = sorted(vnfds, key=lambda v: (-v.vcpu, v.id))
    views = {v["vim_id"]: v for v in vim_views}
    remaining: dict[tuple[str, str], dict] = {}
    for view in vim_views:
        for node in view["nodes"]:
            remaining[(view["vim_id"], node["node_id"])] = {
                "vcpu": node["free"]["vcpu"],
                "memory_mb": node["free"]["memory_mb"],
                "storage_gb": node["free"]["storage_gb"],
            }
    base_used: dict[str, int] = {}
    totals: dict[str, int] = {}
    for view in vim_views:
        total = sum(n["vcpu_total"] for n in view["nodes"])
        free = sum(n["free"]["vcpu"] for n in view["nodes"])
        totals[view["vim_id"]] = total
        base_used[view["vim_id"]] = total - free

    placed_vcpu: dict[str, int] = {vid: 0 for vid in views}
    assignment: dict[str, tuple[str, str]] = {}
    routes: dict[str, Route] = {}
    # diagnostics: keep the first failure seen at the deepest search progress
    best_failure: list = [(-1.0, "no feasible assignment")]

    def fail(progress: float, reason: str) -> None:
        if progress > best_failure[0][0]:
            best_failure[0] = (progress, reason)

    def vim_ok(vnfd: VnfDescriptor, view: dict) -> str | None:
        if vnfd.placement_class != "any" and vnfd.placement_class != view["site_class"]:
            return (f"vnf {vnfd.id}: placement_class {vnfd.placement_class} "
                    f"!= site_class {view['site_class']} of {view['vim_id']}")
        needed = capability_requirements.get(vnfd.id, set())
        missing = set(needed) - set(view["capabilities"])
        if missing:
            return f"vnf {vnfd.id}: vim {view['vim_id']} lacks capabilities {sorted(missing)}"
        for a, b in same_vim:
            other = b if a == vnfd.id else a if b == vnfd.id else None
            if other in assignment and assignment[other][0] != view["vim_id"]:
                return f"colocation same_vim({a},{b}) violated at {view['vim_id']}"
        for a, b in different_vim:
            other = b if a == vnfd.id else a if b == vnfd.id else None
            if other in assignment and assignment[other][0] == view["vim_id"]:
                return f"colocation different_vim({a},{b}) violated at {view['vim_id']}"
        return None

    def check_ready_links(vnf_id: str) -> str | None:
        """Route every NSD link whose endpoints are now both assigned."""
        added = []
        for link in links:
            eps = [ep.vnf_id for ep in link.endpoints]
            if vnf_id not in eps or not all(e in assignment for e in eps):
                continue
            vim_a = assignment[eps[0]][0]
            vim_b = assignment[eps[1]][0]
            route = route_latency(vim_a, vim_b)
            if route is None:
                for l in added:
                    del routes[l]
                return f"link {link.id}: no route between {vim_a} and {vim_b}"
            path, latency = route
            if link.max_latency_us is not None and latency > link.max_latency_us:
                for l in added:
                    del routes[l]
                return (f"link {link.id}: route latency {latency} us exceeds "
                        f"bound {link.max_latency_us} us")
            routes[link.id] = Route(path=tuple(path), latency_us=latency)
            added.append(link.id)
        return None

    def drop_links(vnf_id: str) -> None:
        for link in links:
            if any(ep.vnf_id == vnf_id for ep in link.endpoints):
                routes.pop(link.id, None)

    def candidates(vnfd: VnfDescriptor, depth: int):
        def util(vid: str) -> float:
            total = totals[vid]
            return (base_used[vid] + placed_vcpu[vid]) / total if total else 1.0

        for vid in sorted(views, key=lambda v: (util(v), v)):
            view = views[vid]
            reason = vim_ok(vnfd, view)
            if reason is not None:
                fail(depth, reason)
                continue
            fit_found = False
            for node in sorted(view["nodes"], key=lambda n: n["node_id"]):
                rem = remaining[(vid, node["node_id"])]
                if (rem["vcpu"] >= vnfd.vcpu and rem["memory_mb"] >= vnfd.memory_mb
                        and rem["storage_gb"] >= vnfd.storage_gb):
                    fit_found = True
                    yield vid, node["node_id"]
            if not fit_found:
                fail(depth, f"vnf {vnfd.id}: no node in {vid} fits "
                            f"{vnfd.vcpu} vCPU/{vnfd.memory_mb} MB/{vnfd.storage_gb} GB")

    def place_from(i: int) -> bool:
        if i == len(order):
            return True
        vnfd = order[i]
        for vim_id, node_id in candidates(vnfd, i):
            rem = remaining[(vim_id, node_id)]
            rem["vcpu"] -= vnfd.vcpu
            rem["memory_mb"] -= vnfd.memory_mb
            rem["storage_gb"] -= vnfd.storage_gb
            placed_vcpu[vim_id] += vnfd.vcpu
            assignment[vnfd.id] = (vim_id, node_id)
            reason = check_ready_links(vnfd.id)
            if reason is None:
                if place_from(i + 1):
                    return True
            else:
                # a route failure means a node fit was already found: rank it
                # as deeper progress than candidate filtering at this depth
                fail(i + 0.5, reason)
            drop_links(vnfd.id)
            del assignment[vnfd.id]
            placed_vcpu[vim_id] -= vnfd.vcpu
            rem["vcpu"] += vnfd.vcpu
            rem["memory_mb"] += vnfd.memory_mb
            rem["storage_gb"] += vnfd.storage_gb
        return False

    if place_from(0):
        return assignment, routes
    raise Infeasible(best_failure[0][1])


def check_plan(assignments: dict, vnfds: list[VnfDescriptor], vim_views: list[dict],
               links=(), same_vim=(), different_vim=(),
               route_latency=None, capability_requirements=None) -> list[str]:
    """Independent validation of a finished plan; returns violations (empty ==
    valid). Shares no search machinery with solve_placement."""
    if route_latency is None:
        route_latency = lambda a, b: ((), 0)
    capability_requirements = capability_requirements or {}
    violations = []
    views = {v["vim_id"]: v for v in vim_views}
    by_id = {v.id: v for v in vnfds}

    if set(assignments) != set(by_id):
        violations.append("assignment does not cover every VNF exactly once")
        return violations
    load: dict[tuple[str, str], dict] = {}
    for vnf_id, (vim_id, node_id) in assignments.items():
        vnfd = by_id[vnf_id]
        view = views.get(vim_id)
        if view is None:
            violations.append(f"{vnf_id}: unknown vim {vim_id}")
            continue
        node = next((n for n in view["nodes"] if n["node_id"] == node_id), None)
        if node is None:
            violations.append(f"{vnf_id}: unknown node {vim_id}/{node_id}")
            continue
        if vnfd.placement_class != "any" and vnfd.placement_class != view["site_class"]:
            violations.append(f"{vnf_id}: class {vnfd.placement_class} on {view['site_class']} site")
        missing = set(capability_requirements.get(vnf_id, set())) - set(view["capabilities"])
        if missing:
            violations.append(f"{vnf_id}: vim {vim_id} lacks {sorted(missing)}")
        acc = load.setdefault((vim_id, node_id), {"vcpu": 0, "memory_mb": 0, "storage_gb": 0})
        acc["vcpu"] += vnfd.vcpu
        acc["memory_mb"] += vnfd.memory_mb
        acc["storage_gb"] += vnfd.storage_gb
    for (vim_id, node_id), acc in load.items():
        view = views[vim_id]
        node = next(n for n in view["nodes"] if n["node_id"] == node_id)
        for res in ("vcpu", "memory_mb", "storage_gb"):
            if acc[res] > node["free"][res]:
                violations.append(f"node {vim_id}/{node_id} over {res}: {acc[res]} > {node['free'][res]}")
    for a, b in same_vim:
        if a in assignments and b in assignments and assignments[a][0] != assignments[b][0]:
            violations.append(f"same_vim({a},{b}) violated")
    for a, b in different_vim:
        if a in assignments and b in assignments and assignments[a][0] == assignments[b][0]:
            violations.append(f"different_vim({a},{b}) violated")
    for link in links:
        eps = [ep.vnf_id for ep in link.endpoints]
        if not all(e in assignments for e in eps):
            continue
        route = route_latency(assignments[eps[0]][0], assignments[eps[1]][0])
        if route is None:
            violations.append(f"link {link.id}: unroutable")
        elif link.max_latency_us is not None and route[1] > link.max_latency_us:
            violations.append(f"link {link.id}: latency {route[1]} > {link.max_latency_us}")
    return violations


class Orchestrator:
    """Service + resource orchestration over a set of VIMs and one fabric."""

    def __init__(self, clock: SimClock, catalogue: Catalogue, vims: dict[str, Vim],
                 fabric: Fabric | None = None,
                 vim_attachment: dict[str, str] | None = None,
                 event_log: EventLog | None = None,
                 primitive_runner=None,
                 primitive_duration_us: int = 10_000,
                 tenant: str = "default"):
        self.clock = clock
        self.catalogue = catalogue
        self.vims = vims
        self.fabric = fabric
        self.vim_attachment = vim_attachment or {}
        self.events = event_log if event_log is not None else EventLog(clock)
        self.primitive_runner = primitive_runner or (lambda *a, **kw: None)
        self.primitive_duration_us = primitive_duration_us
        self.tenant = tenant
        self.instances: dict[str, NsInstance] = {}
        self._sessions = {vim_id: vim.connect(vim.credential) for vim_id, vim in vims.items()}
        self._next_instance = 0
        self._slice_gen = 0

    # ---- helpers ------------------------------------------------------------

    def _vim_call(self, vim_id: str, op: str, *args, **kw):
        vim = self.vims[vim_id]
        fn = getattr(vim, op)
        try:
            return fn(self._sessions[vim_id], *args, **kw)
        except SessionExpired:
            self._sessions[vim_id] = vim.connect(vim.credential)
            return fn(self._sessions[vim_id], *args, **kw)

    def _set_state(self, inst: NsInstance, state: str) -> None:
        if state not in LEGAL_TRANSITIONS.get(inst.state, set()):
            raise LifecycleError(f"illegal transition {inst.state} -> {state}")
        inst.transitions.append((inst.state, state, self.clock.now))
        inst.state = state
        self.events.emit("ns_state", instance=inst.instance_id, state=state)

    def _views(self) -> list[dict]:
        views = []
        for vim_id in sorted(self.vims):
            report = self._vim_call(vim_id, "capabilities")
            views.append({
                "vim_id": vim_id,
                "site_class": report["site_class"],
                "capabilities": set(report["permitted_operations"]),
                "nodes": report["nodes"],
                "utilization": self.vims[vim_id].utilization(),
            })
        return views

    def _route_latency(self, vim_a: str, vim_b: str):
        if vim_a == vim_b:
            return (), 0
        if self.fabric is None:
            return (), 0
        sw_a = self.vim_attachment.get(vim_a)
        sw_b = self.vim_attachment.get(vim_b)
        if sw_a is None or sw_b is None:
            return None
        found = self.fabric.shortest_path(sw_a, sw_b)
        if found is None:
            return None
        return tuple(found[0]), found[1]

    # ---- placement ------------------------------------------------------------

    def place(self, nsd: NsDescriptor, capability_requirements=None) -> PlacementPlan:
        vnfds = [self.catalogue.vnfds[v] for v in nsd.vnfs]
        assignments, routes = solve_placement(
            vnfds, self._views(), links=nsd.links,
            same_vim=nsd.same_vim, different_vim=nsd.different_vim,
            route_latency=self._route_latency,
            capability_requirements=capability_requirements,
        )
        return PlacementPlan(nsd_id=nsd.id, assignments=assignments, link_routes=routes)

    # ---- instantiate ------------------------------------------------------------

    def instantiate(self, nsd_id: str, capability_requirements=None) -> NsInstance:
        nsd = self.catalogue.nsds[nsd_id]
        self._next_instance += 1
        inst = NsInstance(instance_id=f"ns-{self._next_instance}", nsd_id=nsd_id)
        self.instances[inst.instance_id] = inst
        self.events.emit("ns_created", instance=inst.instance_id, nsd=nsd_id)
        self._set_state(inst, "instantiating")
        try:
            inst.plan = self.place(nsd, capability_requirements)
        except Infeasible as exc:
            inst.last_error = str(exc)
            self.events.emit("ns_error", instance=inst.instance_id, error=str(exc))
            self._set_state(inst, "failed")
            raise
        build_delays = []
        try:
            for vnf_id in nsd.vnfs:
                vim_id, node_id = inst.plan.assignments[vnf_id]
                vm = self._vim_call(vim_id, "allocate", self.catalogue.vnfds[vnf_id],
                                    hints={"node_id": node_id}, tenant=self.tenant)
                inst.vm_records[vnf_id] = (vim_id, vm.vm_id)
                build_delays.append(self.vims[vim_id].build_delay_us)
                self.events.emit("vm_allocated", instance=inst.instance_id,
                                 vnf=vnf_id, vim=vim_id, vm=vm.vm_id, node=node_id)
        except VimError as exc:
            inst.last_error = str(exc)
            self.events.emit("ns_error", instance=inst.instance_id, error=str(exc))
            self._rollback(inst)
            raise
        wait = max(build_delays, default=0) + 1
        self.clock.schedule_in(wait, lambda: self._configure(inst.instance_id),
                               label=f"mano:configure:{inst.instance_id}")
        return inst

    def _configure(self, instance_id: str) -> None:
        inst = self.instances[instance_id]
        if inst.state != "instantiating":
            return
        self._set_state(inst, "configuring")
        nsd = self.catalogue.nsds[inst.nsd_id]
        try:
            inst.installed_slices = self._install_slices(instance_id, nsd, inst.plan.link_routes)
        except (CapacityExceeded, NoPath) as exc:
            inst.last_error = str(exc)
            self.events.emit("ns_error", instance=inst.instance_id, error=str(exc))
            self._rollback(inst)
            return
        inst.installed_rules = self._install_rules(instance_id, nsd, inst.plan.link_routes)
        self.events.emit("flows_installed", instance=inst.instance_id,
                         slices=list(inst.installed_slices),
                         rules=[r for _, r in inst.installed_rules])
        primitives = [(vnf_id, prim)
                      for vnf_id in nsd.vnfs
                      for prim in self.catalogue.vnfds[vnf_id].config_primitives]
        self._run_primitive(instance_id, primitives, 0)

    def _run_primitive(self, instance_id: str, primitives: list, index: int) -> None:
        inst = self.instances[instance_id]
        if inst.state != "configuring":
            return
        if index >= len(primitives):
            self._set_state(inst, "running")
            inst.started_at = self.clock.now
            self._schedule_reaper(inst)
            return
        vnf_id, prim = primitives[index]
        try:
            self.primitive_runner(instance_id, vnf_id, prim)
        except PrimitiveFailed as exc:
            inst.last_error = str(exc)
            self.events.emit("ns_error", instance=inst.instance_id,
                             error=f"primitive {prim.name} on {vnf_id}: {exc}")
            self._rollback(inst)
            return
        self.events.emit("primitive_done", instance=instance_id, vnf=vnf_id,
                         primitive=prim.name)
        self.clock.schedule_in(self.primitive_duration_us,
                               lambda: self._run_primitive(instance_id, primitives, index + 1),
                               label=f"mano:primitive:{instance_id}:{index + 1}")

    def _schedule_reaper(self, inst: NsInstance) -> None:
        nsd = self.catalogue.nsds[inst.nsd_id]
        lifetimes = [self.catalogue.vnfds[v].lifetime_s for v in nsd.vnfs
                     if self.catalogue.vnfds[v].lifetime_s > 0]
        if not lifetimes:
            return
        deadline = inst.started_at + min(lifetimes) * US_PER_S

        def reap():
            if inst.state == "running":
                self.events.emit("reaper_terminated", instance=inst.instance_id)
                self.terminate(inst.instance_id)

        self.clock.schedule(deadline, reap, label=f"mano:reaper:{inst.instance_id}")

    # ---- flows and slices ----------------------------------------------------------

    def _install_slices(self, instance_id: str, nsd: NsDescriptor,
                        link_routes: dict[str, Route]) -> list[str]:
        """Install per-link slice queues for every routed NSD link; atomic
        (cleans its own partial work on failure)."""
        installed: list[str] = []
        if self.fabric is None:
            return installed
        try:
            for link in nsd.links:
                route = link_routes.get(link.id)
                if route is None or len(route.path) < 2:
                    continue
                self._slice_gen += 1
                slice_id = f"{instance_id}:{link.id}:g{self._slice_gen}"
                profile = SliceProfile(slice_id=slice_id,
                                       guaranteed_mbps=link.required_mbps,
                                       slice_tag=f"{instance_id}:{link.id}")
                self.fabric.apply_slice(profile, list(route.path))
                installed.append(slice_id)
        except (CapacityExceeded, NoPath):
            for slice_id in installed:
                self.fabric.remove_slice(slice_id)
            raise
        return installed

    def _install_rules(self, instance_id: str, nsd: NsDescriptor,
                       link_routes: dict[str, Route]) -> list[tuple[str, str]]:
        """In static-flow fabrics the service's tagged traffic needs explicit
        forwarding rules along its routes, both directions."""
        installed: list[tuple[str, str]] = []
        if self.fabric is None:
            return installed
        for link in nsd.links:
            route = link_routes.get(link.id)
            if route is None or len(route.path) < 2:
                continue
            tag = f"{instance_id}:{link.id}"
            for direction in (route.path, tuple(reversed(route.path))):
                for a, b in zip(direction, direction[1:]):
                    sw = self.fabric.switches[a]
                    if sw.mode != "static_flows":
                        continue
                    out_port = next((p for p, (kind, ref) in sw.ports.items()
                                     if kind == "link" and self._link_leads_to(ref, a, b)), None)
                    if out_port is None:
                        continue
                    rule_id = self.fabric.install_flow(
                        a, priority=50, match={"slice_tag": tag}, action=("output", out_port))
                    installed.append((a, rule_id))
        return installed

    def _link_leads_to(self, link_id: str, from_sw: str, to_sw: str) -> bool:
        info = self.fabric.links[link_id]
        ends = {info["a"][0], info["b"][0]}
        return ends == {from_sw, to_sw}

    # ---- rollback / terminate ---------------------------------------------------------

    def _release_all(self, inst: NsInstance) -> None:
        """Best-effort release with retry until clean (injected release faults
        are retried on a later event)."""
        for key, (vim_id, vm_id) in list(inst.vm_records.items()):
            vm = self.vims[vim_id].vms.get(vm_id)
            if vm is not None and vm.state == "migrating":
                self.vims[vim_id].mark_migrating(vm_id, False)
            self._safe_release(inst, vim_id, vm_id)
            del inst.vm_records[key]
        if inst.pending_migration is not None:
            pm = inst.pending_migration
            inst.pending_migration = None
            self._safe_release(inst, pm["target_vim"], pm["new_vm"])

    def _retry_release(self, inst: NsInstance, vim_id: str, vm_id: str) -> None:
        try:
            self._vim_call(vim_id, "release", vm_id)
        except VimError as exc:
            if "no such VM" in str(exc):
                return
            self.clock.schedule_in(
                100_000, lambda: self._retry_release(inst, vim_id, vm_id),
                label=f"mano:release-retry:{vm_id}")
            return
        for key, rec in list(inst.vm_records.items()):
            if rec == (vim_id, vm_id):
                del inst.vm_records[key]

    def _remove_flows(self, inst: NsInstance) -> None:
        if self.fabric is None:
            return
        for slice_id in inst.installed_slices:
            self.fabric.remove_slice(slice_id)
        inst.installed_slices.clear()
        for switch_id, rule_id in inst.installed_rules:
            self.fabric.remove_flow(switch_id, rule_id)
        inst.installed_rules.clear()

    def _rollback(self, inst: NsInstance) -> None:
        self._remove_flows(inst)
        self._release_all(inst)
        self._set_state(inst, "failed")
        self.events.emit("ns_rolled_back", instance=inst.instance_id)

    def terminate(self, instance_id: str) -> NsInstance:
        inst = self.instances[instance_id]
        if inst.state in TERMINAL_STATES:
            return inst  # idempotent
        self._set_state(inst, "terminating")
        self._remove_flows(inst)
        self._release_all(inst)
        self._set_state(inst, "terminated")
        self.events.emit("ns_terminated", instance=instance_id)
        return inst

    # ---- migrate ----------------------------------------------------------------------

    def migrate(self, instance_id: str, vnf_id: str, target_vim: str) -> NsInstance:
        inst = self.instances[instance_id]
        if inst.state != "running":
            raise LifecycleError(f"instance {instance_id} is {inst.state}, not running")
        if vnf_id not in inst.vm_records:
            raise LifecycleError(f"no VNF {vnf_id} in instance {instance_id}")
        if target_vim not in self.vims:
            raise Infeasible(f"unknown target vim {target_vim}")
        vnfd = self.catalogue.vnfds[vnf_id]
        view = next(v for v in self._views() if v["vim_id"] == target_vim)
        if vnfd.placement_class != "any" and vnfd.placement_class != view["site_class"]:
            raise Infeasible(
                f"vnf {vnf_id}: placement_class {vnfd.placement_class} != "
                f"site_class {view['site_class']} of {target_vim}")
        node = next((n for n in sorted(view["nodes"], key=lambda n: n["node_id"])
                     if n["free"]["vcpu"] >= vnfd.vcpu
                     and n["free"]["memory_mb"] >= vnfd.memory_mb
                     and n["free"]["storage_gb"] >= vnfd.storage_gb), None)
        if node is None:
            raise Infeasible(f"vnf {vnf_id}: no capacity on {target_vim}")
        self._set_state(inst, "migrating")
        old_vim, old_vm = inst.vm_records[vnf_id]
        try:
            new_vm = self._vim_call(target_vim, "allocate", vnfd,
                                    hints={"node_id": node["node_id"]}, tenant=self.tenant)
        except VimError as exc:
            inst.last_error = str(exc)
            self.events.emit("migration_failed", instance=instance_id, error=str(exc))
            self._set_state(inst, "running")
            raise
        self.vims[old_vim].mark_migrating(old_vm, True)
        inst.pending_migration = {
            "vnf_id": vnf_id, "target_vim": target_vim, "target_node": node["node_id"],
            "new_vm": new_vm.vm_id, "old_vim": old_vim, "old_vm": old_vm,
        }
        self.events.emit("migration_started", instance=instance_id, vnf=vnf_id,
                         source=old_vim, target=target_vim)
        wait = self.vims[target_vim].build_delay_us + 1
        self.clock.schedule_in(wait, lambda: self._finish_migration(instance_id),
                               label=f"mano:migrate:{instance_id}:{vnf_id}")
        return inst

    def _finish_migration(self, instance_id: str) -> None:
        inst = self.instances[instance_id]
        pm = inst.pending_migration
        if inst.state != "migrating" or pm is None:
            return
        vnf_id = pm["vnf_id"]
        nsd = self.catalogue.nsds[inst.nsd_id]
        new_assignments = dict(inst.plan.assignments)
        new_assignments[vnf_id] = (pm["target_vim"], pm["target_node"])

        def abort(error: str) -> None:
            inst.pending_migration = None
            self.vims[pm["old_vim"]].mark_migrating(pm["old_vm"], False)
            self._safe_release(inst, pm["target_vim"], pm["new_vm"])
            inst.last_error = error
            self.events.emit("migration_failed", instance=instance_id, error=error)
            self._set_state(inst, "running")

        # re-verify link QoS bounds against the new routes
        new_routes: dict[str, Route] = {}
        for link in nsd.links:
            eps = [ep.vnf_id for ep in link.endpoints]
            if vnf_id not in eps:
                continue
            route = self._route_latency(new_assignments[eps[0]][0], new_assignments[eps[1]][0])
            if route is None:
                abort(f"link {link.id}: no route after migration")
                return
            path, latency = route
            if link.max_latency_us is not None and latency > link.max_latency_us:
                abort(f"link {link.id}: latency {latency} us exceeds bound after migration")
                return
            new_routes[link.id] = Route(path=tuple(path), latency_us=latency)
        # day-1 primitives run against the new VM before traffic switches
        for prim in self.catalogue.vnfds[vnf_id].config_primitives:
            try:
                self.primitive_runner(instance_id, vnf_id, prim)
            except PrimitiveFailed as exc:
                abort(f"primitive {prim.name} on {vnf_id}: {exc}")
                return
        # atomic switch at this single simulation event: old slice queues come
        # out first so shared links can admit the re-routed guarantee (no
        # virtual time passes); for rules, new ones go in before old come out
        # so the match space stays covered
        old_slices = list(inst.installed_slices)
        old_rules = list(inst.installed_rules)
        old_routes = dict(inst.plan.link_routes)
        merged_routes = {**old_routes, **new_routes}
        if self.fabric is not None:
            for slice_id in old_slices:
                self.fabric.remove_slice(slice_id)
            try:
                new_slices = self._install_slices(instance_id, nsd, merged_routes)
            except (CapacityExceeded, NoPath) as exc:
                # capacity just freed is enough to put the old queues back
                inst.installed_slices = self._install_slices(instance_id, nsd, old_routes)
                abort(str(exc))
                return
            new_rules = self._install_rules(instance_id, nsd, merged_routes)
            for switch_id, rule_id in old_rules:
                self.fabric.remove_flow(switch_id, rule_id)
            inst.installed_slices = new_slices
            inst.installed_rules = new_rules
        inst.plan.assignments = new_assignments
        inst.plan.link_routes = merged_routes
        self.vims[pm["old_vim"]].mark_migrating(pm["old_vm"], False)
        self._safe_release(inst, pm["old_vim"], pm["old_vm"])
        inst.vm_records[pm["vnf_id"]] = (pm["target_vim"], pm["new_vm"])
        inst.pending_migration = None
        self.events.emit("migrated", instance=instance_id, vnf=vnf_id,
                         target=pm["target_vim"])
        self._set_state(inst, "running")

    # ---- scale ------------------------------------------------------------------------

    def scale(self, instance_id: str, vnf_id: str, replica_delta: int) -> NsInstance:
        """Adjust replica count; replicas are placed by class/capacity like
        the base VNF (colocation pairs bind named VNFs, not replicas)."""
        inst = self.instances[instance_id]
        if inst.state != "running":
            raise LifecycleError(f"instance {instance_id} is {inst.state}, not running")
        if replica_delta == 0:
            raise ValueError("replica_delta must be nonzero")
        nsd = self.catalogue.nsds[inst.nsd_id]
        if vnf_id not in nsd.vnfs:
            raise LifecycleError(f"no VNF {vnf_id} in {inst.nsd_id}")
        current = inst.replicas.get(vnf_id, 1)
        target = current + replica_delta
        if target < 1:
            raise Infeasible(f"vnf {vnf_id}: replica count must stay >= 1 (was {current})")
        self._set_state(inst, "scaling")
        vnfd = self.catalogue.vnfds[vnf_id]
        try:
            if replica_delta > 0:
                added = []
                try:
                    for i in range(replica_delta):
                        replica_key = f"{vnf_id}#{current + i + 1}"
                        assignments, _ = solve_placement([vnfd], self._views())
                        vim_id, node_id = assignments[vnf_id]
                        vm = self._vim_call(vim_id, "allocate", vnfd,
                                            hints={"node_id": node_id}, tenant=self.tenant)
                        inst.vm_records[replica_key] = (vim_id, vm.vm_id)
                        added.append(replica_key)
                        self.events.emit("vm_allocated", instance=instance_id,
                                         vnf=replica_key, vim=vim_id, vm=vm.vm_id,
                                         node=node_id)
                except (Infeasible, VimError) as exc:
                    for key in added:
                        vim_id, vm_id = inst.vm_records.pop(key)
                        self._safe_release(inst, vim_id, vm_id)
                    raise Infeasible(str(exc)) from exc
            else:
                keys = [f"{vnf_id}#{n}" for n in range(current, target, -1) if n > 1]
                if len(keys) < -replica_delta:
                    raise Infeasible(f"vnf {vnf_id}: cannot drop the base instance")
                for key in keys:
                    vim_id, vm_id = inst.vm_records.pop(key)
                    self._safe_release(inst, vim_id, vm_id)
        except Infeasible:
            self._set_state(inst, "running")
            raise
        inst.replicas[vnf_id] = target
        self.events.emit("load_share_updated", instance=instance_id, vnf=vnf_id,
                         replicas=target)
        self._set_state(inst, "running")
        self.events.emit("scaled", instance=instance_id, vnf=vnf_id, replicas=target)
        return inst

    def _safe_release(self, inst: NsInstance, vim_id: str, vm_id: str) -> None:
        try:
            self._vim_call(vim_id, "release", vm_id)
        except VimError as exc:
            if "no such VM" in str(exc):
                return
            self.events.emit("release_retry", instance=inst.instance_id,
                             vm=vm_id, error=str(exc))
            self.clock.schedule_in(
                100_000, lambda: self._retry_release(inst, vim_id, vm_id),
                label=f"mano:release-retry:{vm_id}")

    # ---- introspection ------------------------------------------------------------------

    def service_endpoint(self, instance_id: str, vnf_id: str) -> str | None:
        """Fabric endpoint of the VIM hosting a VNF (scenario attaches one
        endpoint named vim:<id> per VIM); None without a fabric."""
        inst = self.instances[instance_id]
        vim_id, _ = inst.vm_records[vnf_id]
        if self.fabric is None:
            return None
        candidate = f"vim:{vim_id}"
        return candidate if candidate in self.fabric.endpoints else None

    def describe(self, instance_id: str) -> dict:
        inst = self.instances[instance_id]
        return {
            "instance_id": inst.instance_id,
            "nsd_id": inst.nsd_id,
            "state": inst.state,
            "plan": inst.plan.as_dict() if inst.plan else None,
            "vms": {k: {"vim": v[0], "vm_id": v[1]} for k, v in sorted(inst.vm_records.items())},
            "replicas": dict(sorted(inst.replicas.items())),
            "started_at": inst.started_at,
            "last_error": inst.last_error,
            "audit": self.events.for_instance(instance_id),
        }

    def leak_check(self) -> dict:
        """Conservation audit: per-VIM used counters vs live VM demand, and
        the orchestrator-side view of which VMs belong to live instances."""
        out = {}
        for vim_id, vim in self.vims.items():
            out[vim_id] = {
                "used": vim.used_totals(),
                "live_demand": vim.live_vm_demand(),
                "consistent": vim.used_totals() == vim.live_vm_demand(),
            }
        return out
