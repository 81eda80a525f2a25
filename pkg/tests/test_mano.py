"""Placement search vs exhaustive oracle, and the NS lifecycle machinery."""

import random

import pytest

from micromano.catalog import (
    Catalogue, LinkEndpoint, NsDescriptor, VirtualLinkDescriptor, VnfDescriptor,
)
from micromano.mano import (
    Infeasible, LifecycleError, Orchestrator, PrimitiveFailed, check_plan,
    solve_placement,
)
from micromano.sim import SimClock, US_PER_S
from micromano.vim import ComputeNode, Vim, VimError


# ---- placement: hand-built cases -------------------------------------------------


def _vnfd(id, vcpu=1, memory_mb=512, storage_gb=1, placement_class="any", **kw):
    return VnfDescriptor(id=id, name=id, vcpu=vcpu, memory_mb=memory_mb,
                         storage_gb=storage_gb, placement_class=placement_class, **kw)


def _view(vim_id, nodes, site_class="regional", capabilities=("allocate", "usage")):
    node_views = []
    for node_id, vcpu, mem, sto in nodes:
        node_views.append({
            "node_id": node_id, "vcpu_total": vcpu,
            "free": {"vcpu": vcpu, "memory_mb": mem, "storage_gb": sto},
            "flavor_tags": [],
        })
    return {"vim_id": vim_id, "site_class": site_class,
            "capabilities": set(capabilities), "nodes": node_views}


def test_split_across_vims_when_one_cannot_hold_both():
    views = [_view("vimA", [("n0", 4, 8192, 100)]),
             _view("vimB", [("n0", 4, 8192, 100)])]
    vnfds = [_vnfd("v1", vcpu=3), _vnfd("v2", vcpu=3)]
    assignments, _ = solve_placement(vnfds, views)
    assert assignments["v1"][0] != assignments["v2"][0]


def test_same_vim_colocation_infeasible_when_too_big():
    views = [_view("vimA", [("n0", 4, 8192, 100)]),
             _view("vimB", [("n0", 4, 8192, 100)])]
    vnfds = [_vnfd("v1", vcpu=3), _vnfd("v2", vcpu=3)]
    with pytest.raises(Infeasible):
        solve_placement(vnfds, views, same_vim=[("v1", "v2")])


def test_edge_class_goes_to_edge_vim():
    views = [_view("vimA", [("n0", 8, 8192, 100)], site_class="regional"),
             _view("vimB", [("n0", 8, 8192, 100)], site_class="edge")]
    vnfds = [_vnfd("up", placement_class="edge")]
    assignments, _ = solve_placement(vnfds, views)
    assert assignments["up"][0] == "vimB"


def test_capability_requirement_filters_vims():
    views = [_view("vimA", [("n0", 8, 8192, 100)], capabilities={"allocate"}),
             _view("vimB", [("n0", 8, 8192, 100)], capabilities={"allocate", "usage"})]
    vnfds = [_vnfd("v1")]
    assignments, _ = solve_placement(
        vnfds, views, capability_requirements={"v1": {"usage"}})
    assert assignments["v1"][0] == "vimB"


def test_link_latency_bound_forces_colocation():
    views = [_view("vimA", [("n0", 2, 8192, 100)]),
             _view("vimB", [("n0", 8, 8192, 100)])]
    vnfds = [_vnfd("v1", vcpu=2), _vnfd("v2", vcpu=2)]
    link = VirtualLinkDescriptor(
        id="l1",
        endpoints=(LinkEndpoint("v1", "cp"), LinkEndpoint("v2", "cp")),
        required_mbps=10, max_latency_us=100)

    def route_latency(a, b):
        return ((), 0) if a == b else ((a, b), 10_000)

    assignments, routes = solve_placement(vnfds, views, links=[link],
                                          route_latency=route_latency)
    # only vimB can hold both inside the latency bound
    assert assignments["v1"][0] == assignments["v2"][0] == "vimB"
    assert routes["l1"].latency_us == 0


def test_infeasible_names_first_violated_constraint():
    views = [_view("vimA", [("n0", 2, 8192, 100)])]
    with pytest.raises(Infeasible) as exc:
        solve_placement([_vnfd("v1", vcpu=4)], views)
    assert "v1" in str(exc.value)


def test_different_vim_constraint_respected():
    views = [_view("vimA", [("n0", 8, 8192, 100)]),
             _view("vimB", [("n0", 8, 8192, 100)])]
    vnfds = [_vnfd("v1"), _vnfd("v2")]
    assignments, _ = solve_placement(vnfds, views, different_vim=[("v1", "v2")])
    assert assignments["v1"][0] != assignments["v2"][0]


# ---- placement: randomized equivalence with exhaustive search ---------------------

from oracle_helpers import oracle_feasible, random_instance  # noqa: E402


def test_placement_matches_exhaustive_oracle_on_200_instances():
    rng = random.Random(20260810)
    agree = 0
    for case in range(200):
        vnfds, views, links, same, diff, caps_req, route_latency = random_instance(rng)
        try:
            assignments, _ = solve_placement(
                vnfds, views, links=links, same_vim=same, different_vim=diff,
                route_latency=route_latency, capability_requirements=caps_req)
            got = True
        except Infeasible:
            got = False
        expect = oracle_feasible(vnfds, views, links, same, diff, caps_req, route_latency)
        assert got == expect, f"case {case}: solver={got} oracle={expect}"
        if got:
            violations = check_plan(assignments, vnfds, views, links=links,
                                    same_vim=same, different_vim=diff,
                                    route_latency=route_latency,
                                    capability_requirements=caps_req)
            assert violations == [], f"case {case}: {violations}"
        agree += 1
    assert agree == 200


# ---- lifecycle ----------------------------------------------------------------------


def _world(n_vims=2, nodes_per_vim=2, vcpu=8, build_delay_us=500_000,
           site_classes=None, seed=1):
    clock = SimClock(seed=seed)
    cat = Catalogue()
    vims = {}
    for i in range(n_vims):
        nodes = [ComputeNode(node_id=f"n{k}", vcpu_total=vcpu,
                             memory_total_mb=16384, storage_total_gb=200)
                 for k in range(nodes_per_vim)]
        site = site_classes[i] if site_classes else "regional"
        vims[f"vim{i}"] = Vim(clock, f"vim{i}", nodes, site_class=site,
                              build_delay_us=build_delay_us)
    return clock, cat, vims


def _register_simple_nsd(cat, nsd_id="ns-simple", vnf_ids=("v1",), vcpu=2,
                         primitives=(), lifetime_s=0):
    for vid in vnf_ids:
        cat.register(VnfDescriptor(
            id=vid, name=vid, vcpu=vcpu, memory_mb=1024, storage_gb=5,
            lifetime_s=lifetime_s,
            config_primitives=tuple(primitives)))
    cat.register(NsDescriptor(id=nsd_id, name=nsd_id, vnfs=tuple(vnf_ids)))


def test_instantiate_happy_path_audit_order():
    clock, cat, vims = _world()
    from micromano.catalog import ConfigPrimitive
    _register_simple_nsd(cat, primitives=[ConfigPrimitive("day1-init")])
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    assert inst.state == "instantiating"
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "running"
    kinds = [e["kind"] for e in orch.events.for_instance(inst.instance_id)]
    i_alloc = kinds.index("vm_allocated")
    i_flows = kinds.index("flows_installed")
    i_prim = kinds.index("primitive_done")
    assert i_alloc < i_flows < i_prim


def test_instantiate_quota_rollback():
    clock, cat, vims = _world(n_vims=1, nodes_per_vim=1, vcpu=4)
    _register_simple_nsd(cat, nsd_id="ns-two", vnf_ids=("v1", "v2"), vcpu=3)
    orch = Orchestrator(clock, cat, vims)
    with pytest.raises(Infeasible):
        orch.instantiate("ns-two")
    inst = next(iter(orch.instances.values()))
    assert inst.state == "failed"
    assert vims["vim0"].used_totals()["vcpu"] == 0


def test_instantiate_vim_fault_releases_first_vm():
    clock, cat, vims = _world(n_vims=1, nodes_per_vim=2, vcpu=8)
    _register_simple_nsd(cat, nsd_id="ns-two", vnf_ids=("v1", "v2"), vcpu=3)
    orch = Orchestrator(clock, cat, vims)
    # fail exactly the second allocate call of the instantiate
    calls = {"n": 0}
    original = vims["vim0"].allocate

    def flaky(session, vnfd, hints=None, tenant="default"):
        calls["n"] += 1
        if calls["n"] == 2:
            raise VimError("vim0: injected allocate failure")
        return original(session, vnfd, hints=hints, tenant=tenant)

    vims["vim0"].allocate = flaky
    with pytest.raises(VimError):
        orch.instantiate("ns-two")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    inst = next(iter(orch.instances.values()))
    assert inst.state == "failed"
    assert vims["vim0"].used_totals()["vcpu"] == 0


def test_primitive_failure_rolls_back_everything():
    from micromano.catalog import ConfigPrimitive
    clock, cat, vims = _world()
    _register_simple_nsd(cat, primitives=[
        ConfigPrimitive("p1"), ConfigPrimitive("p2"), ConfigPrimitive("p3")])
    calls = {"n": 0}

    def runner(instance_id, vnf_id, prim):
        calls["n"] += 1
        if prim.name == "p2":
            raise PrimitiveFailed("p2 exploded")

    orch = Orchestrator(clock, cat, vims, primitive_runner=runner)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "failed"
    assert calls["n"] == 2  # p3 never ran
    for vim in vims.values():
        assert vim.used_totals()["vcpu"] == 0


def test_terminate_running_restores_baseline_and_is_idempotent():
    clock, cat, vims = _world()
    _register_simple_nsd(cat)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "running"
    orch.terminate(inst.instance_id)
    assert inst.state == "terminated"
    assert all(v.used_totals()["vcpu"] == 0 for v in vims.values())
    orch.terminate(inst.instance_id)  # no-op
    assert inst.state == "terminated"


def test_terminate_failed_instance_is_noop_success():
    clock, cat, vims = _world(n_vims=1, nodes_per_vim=1, vcpu=1)
    _register_simple_nsd(cat, vcpu=4)
    orch = Orchestrator(clock, cat, vims)
    with pytest.raises(Infeasible):
        orch.instantiate("ns-simple")
    inst = next(iter(orch.instances.values()))
    orch.terminate(inst.instance_id)
    assert inst.state == "failed"


def test_scale_up_down_and_atomicity():
    clock, cat, vims = _world(n_vims=2, nodes_per_vim=1, vcpu=8)
    _register_simple_nsd(cat, vcpu=2)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    orch.scale(inst.instance_id, "v1", +1)
    assert inst.replicas["v1"] == 2
    assert len(inst.vm_records) == 2
    with pytest.raises(Infeasible):
        orch.scale(inst.instance_id, "v1", -2)  # would go below 1
    assert inst.replicas["v1"] == 2
    # +7 replicas of 2 vCPU exceeds what's left (16 total, 4 used, 12 free)
    used_before = sum(v.used_totals()["vcpu"] for v in vims.values())
    with pytest.raises(Infeasible):
        orch.scale(inst.instance_id, "v1", +7)
    assert inst.replicas["v1"] == 2
    assert inst.state == "running"
    assert sum(v.used_totals()["vcpu"] for v in vims.values()) == used_before
    orch.scale(inst.instance_id, "v1", -1)
    assert inst.replicas["v1"] == 1
    total_used = sum(v.used_totals()["vcpu"] for v in vims.values())
    assert total_used == 2


def test_migrate_target_without_capacity_keeps_running():
    clock, cat, vims = _world(n_vims=2, nodes_per_vim=1, vcpu=4)
    _register_simple_nsd(cat, vcpu=3)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    source_vim = inst.vm_records["v1"][0]
    target = "vim1" if source_vim == "vim0" else "vim0"
    # fill the target completely
    vims[target].nodes["n0"].vcpu_used = 4
    with pytest.raises(Infeasible):
        orch.migrate(inst.instance_id, "v1", target)
    assert inst.state == "running"
    assert inst.vm_records["v1"][0] == source_vim


def test_migrate_moves_vm_and_returns_to_running():
    clock, cat, vims = _world(n_vims=2)
    _register_simple_nsd(cat)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    source = inst.vm_records["v1"][0]
    target = "vim1" if source == "vim0" else "vim0"
    orch.migrate(inst.instance_id, "v1", target)
    assert inst.state == "migrating"
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "running"
    assert inst.vm_records["v1"][0] == target
    assert vims[source].used_totals()["vcpu"] == 0


def test_terminate_during_migration_cleans_both_vms():
    clock, cat, vims = _world(n_vims=2)
    _register_simple_nsd(cat)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    source = inst.vm_records["v1"][0]
    target = "vim1" if source == "vim0" else "vim0"
    orch.migrate(inst.instance_id, "v1", target)
    orch.terminate(inst.instance_id)  # mid-migration
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "terminated"
    assert all(v.used_totals()["vcpu"] == 0 for v in vims.values())


def test_reaper_terminates_after_lifetime():
    clock, cat, vims = _world()
    _register_simple_nsd(cat, lifetime_s=10)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 30 * US_PER_S)
    assert inst.state == "terminated"
    kinds = [e["kind"] for e in orch.events.for_instance(inst.instance_id)]
    assert "reaper_terminated" in kinds
    assert all(v.used_totals()["vcpu"] == 0 for v in vims.values())


def test_state_transitions_always_legal():
    from micromano.mano import LEGAL_TRANSITIONS
    clock, cat, vims = _world()
    _register_simple_nsd(cat)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    orch.scale(inst.instance_id, "v1", +1)
    orch.migrate(inst.instance_id, "v1", inst.vm_records["v1"][0])
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    orch.terminate(inst.instance_id)
    for frm, to, _ in inst.transitions:
        assert to in LEGAL_TRANSITIONS[frm], f"{frm} -> {to}"


def test_ops_on_nonrunning_instance_rejected():
    clock, cat, vims = _world()
    _register_simple_nsd(cat)
    orch = Orchestrator(clock, cat, vims)
    inst = orch.instantiate("ns-simple")  # still instantiating
    with pytest.raises(LifecycleError):
        orch.scale(inst.instance_id, "v1", +1)
    with pytest.raises(LifecycleError):
        orch.migrate(inst.instance_id, "v1", "vim1")


def test_migration_rule_coverage_make_before_break():
    """During migration on a static-flow fabric, every new forwarding rule is
    installed before any old one is removed, so the service's match space is
    covered at every point of the switch event."""
    from micromano.catalog import LinkEndpoint, VirtualLinkDescriptor
    from micromano.sdn import Fabric

    clock = SimClock(seed=77)
    fabric = Fabric(clock)
    for sw in ("swA", "swB", "swC"):
        fabric.add_switch(sw, mode="static_flows")
    fabric.connect("swA", "east", "swB", "west", latency_us=1000, capacity_mbps=1000)
    fabric.connect("swB", "east", "swC", "west", latency_us=1000, capacity_mbps=1000)

    cat = Catalogue()
    cat.register(VnfDescriptor(id="v1", name="v1", vcpu=2, memory_mb=1024,
                               storage_gb=5, connection_points=("cp",)))
    cat.register(VnfDescriptor(id="v2", name="v2", vcpu=2, memory_mb=1024,
                               storage_gb=5, connection_points=("cp",)))
    cat.register(NsDescriptor(
        id="ns-routed", name="ns-routed", vnfs=("v1", "v2"),
        links=(VirtualLinkDescriptor(
            id="svc", endpoints=(LinkEndpoint("v1", "cp"), LinkEndpoint("v2", "cp")),
            required_mbps=10),),
        different_vim=(("v1", "v2"),)))

    vims = {}
    attach = {"vim0": "swA", "vim1": "swC", "vim2": "swB"}
    for vim_id in attach:
        nodes = [ComputeNode(node_id="n0", vcpu_total=8, memory_total_mb=16384,
                             storage_total_gb=100)]
        vims[vim_id] = Vim(clock, vim_id, nodes, build_delay_us=100_000)
    orch = Orchestrator(clock, cat, vims, fabric=fabric, vim_attachment=attach)

    inst = orch.instantiate("ns-routed")
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "running"
    old_rules = set(rid for _, rid in inst.installed_rules)
    assert old_rules, "routed service must install static rules"

    calls = []
    original_install, original_remove = fabric.install_flow, fabric.remove_flow

    def tracked_install(sw, **kw):
        rule_id = original_install(sw, **kw)
        calls.append(("install", rule_id))
        return rule_id

    def tracked_remove(sw, rule_id):
        calls.append(("remove", rule_id))
        original_remove(sw, rule_id)

    fabric.install_flow, fabric.remove_flow = tracked_install, tracked_remove
    source = inst.vm_records["v1"][0]
    target = next(v for v in attach if v not in
                  {rec[0] for rec in inst.vm_records.values()})
    orch.migrate(inst.instance_id, "v1", target)
    clock.run_until_idle(max_time=clock.now + 5 * US_PER_S)
    assert inst.state == "running"
    assert inst.vm_records["v1"][0] == target

    installs = [i for i, (kind, _) in enumerate(calls) if kind == "install"]
    removes = [i for i, (kind, rid) in enumerate(calls) if kind == "remove"]
    assert installs and removes
    assert max(installs) < min(removes), "new rules must land before old ones go"
    removed_ids = {rid for kind, rid in calls if kind == "remove"}
    assert removed_ids == old_rules
