"""Scenario files and world assembly.

A scenario is a JSON document pinning everything a run needs: seed, VIMs,
switch topology, access paths, descriptors, telemetry collectors, KPI targets
and a timed action script. ``build_world`` turns a validated scenario into a
live World whose ``execute`` dispatches the same actions the HTTP API serves,
so scripted runs and interactive operation share one code path.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from micromano.catalog import (
    Catalogue, DanglingReference, SchemaError, load_documents,
)
from micromano.events import EventLog
from micromano.hag import AccessPath, HagSession
from micromano.mano import Orchestrator, PrimitiveFailed
from micromano.sdn import Fabric, SliceProfile
from micromano.sim import SimClock, make_link
from micromano.telemetry import (
    MetricSample, SDN_POLL_INTERVAL_US, TelemetryService, VIM_POLL_INTERVAL_US,
)
from micromano.vim import vim_from_config


def load_scenario(source) -> dict:
    """Load and validate a scenario from a path, JSON text, or dict."""
    if isinstance(source, dict):
        cfg = source
    else:
        if isinstance(source, Path):
            text = source.read_text()
        elif isinstance(source, str) and source.lstrip().startswith(("{", "[")):
            text = source
        else:
            text = Path(source).read_text()
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise SchemaError("$", "scenario must be an object")
    if "seed" not in cfg:
        raise SchemaError("$.seed", "missing required field (no implicit randomness)")
    if not isinstance(cfg["seed"], int):
        raise SchemaError("$.seed", "seed must be an integer")
    cfg.setdefault("id", "unnamed")
    cfg.setdefault("vims", [])
    cfg.setdefault("topology", {"switches": [], "links": [], "endpoints": []})
    cfg.setdefault("access_paths", [])
    cfg.setdefault("descriptors", [])
    cfg.setdefault("kpi_targets", {})
    cfg.setdefault("script", [])
    cfg.setdefault("telemetry", {})
    _validate_references(cfg)
    return cfg


def _validate_references(cfg: dict) -> None:
    topo = cfg["topology"]
    switch_ids = {s["id"] for s in topo.get("switches", [])}
    for link in topo.get("links", []):
        for end in ("a", "b"):
            if link[end][0] not in switch_ids:
                raise DanglingReference(
                    f"link {link.get('id', '?')}: switch {link[end][0]} not defined")
    for ep in topo.get("endpoints", []):
        if ep["switch"] not in switch_ids:
            raise DanglingReference(f"endpoint {ep['id']}: switch {ep['switch']} not defined")
    for vim in cfg["vims"]:
        attach = vim.get("attach")
        if attach is not None and attach not in switch_ids:
            raise DanglingReference(f"vim {vim['vim_id']}: attach switch {attach} not defined")
    path_ids = {p["path_id"] for p in cfg["access_paths"]}
    for action in cfg["script"]:
        if action.get("action") == "hag_open":
            for pid in action.get("paths", []):
                if pid not in path_ids:
                    raise DanglingReference(f"script hag_open: unknown access path {pid}")


class PathMonitor:
    """Continuously probes one endpoint pair and caches the latest result."""

    def __init__(self, fabric: Fabric, monitor_id: str, src: str, dst: str,
                 interval_us: int = SDN_POLL_INTERVAL_US, n_probes: int = 5):
        self.fabric = fabric
        self.monitor_id = monitor_id
        self.src = src
        self.dst = dst
        self.interval_us = interval_us
        self.n_probes = n_probes
        self.latest = None
        self.fabric.clock.schedule_in(0, self._cycle, label=f"monitor:{monitor_id}")

    def _cycle(self) -> None:
        try:
            self.fabric.start_measurement(
                self.src, self.dst, n_probes=self.n_probes, probe_size=100,
                probe_gap_us=10_000, burst_s=0, on_done=self._done)
        except Exception:
            self.fabric.clock.schedule_in(self.interval_us, self._cycle,
                                          label=f"monitor:{self.monitor_id}")

    def _done(self, result) -> None:
        self.latest = result
        self.fabric.clock.schedule_in(self.interval_us, self._cycle,
                                      label=f"monitor:{self.monitor_id}")

    def samples(self, now: int) -> list[MetricSample]:
        m = self.latest
        if m is None:
            return []
        src = f"sdn:{self.monitor_id}"
        out = []
        if m.latency_us is not None:
            out.append(MetricSample(src, "latency_us", round(m.latency_us, 3), now))
            out.append(MetricSample(src, "jitter_us", round(m.jitter_us, 3), now))
        out.append(MetricSample(src, "loss_rate", round(m.loss_rate, 6), now))
        if m.bandwidth_mbps is not None:
            out.append(MetricSample(src, "bandwidth_mbps", float(m.bandwidth_mbps), now))
        return out


class ScriptedPrimitives:
    """Config primitives as named actions with programmable outcomes."""

    def __init__(self):
        self.fail_rules: dict[tuple[str, str], int] = {}
        self.calls: list[tuple[str, str, str]] = []

    def fail_on(self, vnf_id: str, primitive_name: str, times: int = 1) -> None:
        self.fail_rules[(vnf_id, primitive_name)] = \
            self.fail_rules.get((vnf_id, primitive_name), 0) + times

    def __call__(self, instance_id: str, vnf_id: str, prim) -> None:
        self.calls.append((instance_id, vnf_id, prim.name))
        key = (vnf_id, prim.name)
        if self.fail_rules.get(key, 0) > 0:
            self.fail_rules[key] -= 1
            raise PrimitiveFailed(f"scripted failure of {prim.name} on {vnf_id}")


class World:
    """A fully-wired simulation instance built from one scenario."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.clock = SimClock(seed=cfg["seed"])
        self.events = EventLog(self.clock)
        self.fabric = Fabric(self.clock)
        self.primitives = ScriptedPrimitives()
        self._build_topology(cfg["topology"])
        self.vims = {}
        self.vim_attachment = {}
        self._build_vims(cfg["vims"])
        self.catalogue: Catalogue = load_documents(cfg["descriptors"])
        if cfg.get("catalogue_dir"):
            extra = load_documents(
                [json.loads(p.read_text())
                 for p in sorted(Path(cfg["catalogue_dir"]).glob("*.json"))])
            for vnfd in extra.vnfds.values():
                self.catalogue.register(vnfd)
            for nsd in extra.nsds.values():
                self.catalogue.register(nsd)
        self.orchestrator = Orchestrator(
            self.clock, self.catalogue, self.vims, fabric=self.fabric,
            vim_attachment=self.vim_attachment, event_log=self.events,
            primitive_runner=self.primitives)
        self.telemetry = TelemetryService(
            self.clock, token_ttl_s=cfg.get("telemetry", {}).get("token_ttl_s", 3600))
        self.access_paths_cfg = {p["path_id"]: p for p in cfg["access_paths"]}
        self.hag_sessions: dict[str, HagSession] = {}
        self.monitors: dict[str, PathMonitor] = {}
        self.aliases: dict[str, str] = {}       # script alias -> instance id
        self.measurements: dict[str, object] = {}  # alias -> Measurement
        self._next_session = 0
        self._setup_collectors(cfg.get("telemetry", {}))

    # ---- construction ------------------------------------------------------

    def _build_topology(self, topo: dict) -> None:
        for sw in topo.get("switches", []):
            self.fabric.add_switch(sw["id"], mode=sw.get("mode", "mac_learning"))
        for link in topo.get("links", []):
            self.fabric.connect(
                link["a"][0], link["a"][1], link["b"][0], link["b"][1],
                link_id=link.get("id"),
                latency_us=link["latency_us"],
                capacity_mbps=link["capacity_mbps"],
                jitter_us=link.get("jitter_us", 0),
                loss_prob=link.get("loss_prob", 0.0))
        for ep in topo.get("endpoints", []):
            self.fabric.hot_plug(ep["switch"], ep.get("port", f"h-{ep['id']}"), ep["id"])

    def _build_vims(self, vim_cfgs: list[dict]) -> None:
        for cfg in vim_cfgs:
            vim = vim_from_config(self.clock, cfg)
            self.vims[vim.vim_id] = vim
            attach = cfg.get("attach")
            if attach is not None:
                self.vim_attachment[vim.vim_id] = attach
                self.fabric.hot_plug(attach, f"p-{vim.vim_id}", f"vim:{vim.vim_id}")

    def _setup_collectors(self, tcfg: dict) -> None:
        if tcfg.get("collect_vims", True):
            for vim_id in sorted(self.vims):
                vim = self.vims[vim_id]

                def poll(now, v=vim):
                    used = v.used_totals()
                    return [
                        MetricSample(f"vim:{v.vim_id}", "vcpu_used", float(used["vcpu"]), now),
                        MetricSample(f"vim:{v.vim_id}", "memory_used_mb",
                                     float(used["memory_mb"]), now),
                    ]

                self.telemetry.register_collector(
                    f"col-vim-{vim_id}", f"vim:{vim_id}", VIM_POLL_INTERVAL_US, poll)
        for mon_cfg in tcfg.get("sdn_paths", []):
            self.add_path_monitor(mon_cfg["id"], mon_cfg["src"], mon_cfg["dst"])

    def add_path_monitor(self, monitor_id: str, src: str, dst: str) -> PathMonitor:
        monitor = PathMonitor(self.fabric, monitor_id, src, dst)
        self.monitors[monitor_id] = monitor
        self.telemetry.register_collector(
            f"col-sdn-{monitor_id}", f"sdn:{monitor_id}", SDN_POLL_INTERVAL_US,
            monitor.samples)
        return monitor

    # ---- reference resolution --------------------------------------------------

    def resolve_instance(self, ref: str) -> str:
        if ref in self.orchestrator.instances:
            return ref
        if ref in self.aliases:
            return self.aliases[ref]
        raise KeyError(f"unknown instance reference {ref!r}")

    def resolve_endpoint(self, ref: str) -> str:
        """Endpoint id, or ``service:<alias>/<vnf>`` for a VNF's current VIM."""
        if ref.startswith("service:"):
            alias, _, vnf = ref[len("service:"):].partition("/")
            instance_id = self.resolve_instance(alias)
            endpoint = self.orchestrator.service_endpoint(instance_id, vnf)
            if endpoint is None:
                raise KeyError(f"no endpoint for {ref}")
            return endpoint
        return ref

    # ---- hag ----------------------------------------------------------------------

    def open_hag_session(self, path_ids: list[str], policy: str,
                         session_id: str | None = None) -> HagSession:
        if session_id is None:
            self._next_session += 1
            session_id = f"hag-{self._next_session}"
        paths = []
        for pid in path_ids:
            pcfg = self.access_paths_cfg[pid]
            link = make_link(self.clock, f"access:{session_id}:{pid}",
                             latency_us=pcfg["latency_us"],
                             capacity_mbps=pcfg["capacity_mbps"],
                             jitter_us=pcfg.get("jitter_us", 0),
                             loss_prob=pcfg.get("loss_prob", 0.0))
            paths.append(AccessPath(path_id=pid, technology=pcfg["technology"], link=link))
        session = HagSession(self.clock, session_id, paths, policy)
        self.hag_sessions[session_id] = session
        self.events.emit("hag_session_opened", session=session_id, policy=policy,
                         paths=list(path_ids))

        def poll(now, s=session):
            stats = s.stats()
            return [MetricSample(f"hag:{s.session_id}", "throughput_mbps",
                                 stats["goodput_mbps"], now)]

        self.telemetry.register_collector(
            f"col-hag-{session_id}", f"hag:{session_id}", SDN_POLL_INTERVAL_US, poll)
        return session

    # ---- unified action dispatch ----------------------------------------------------

    def execute(self, action: dict) -> dict:
        """Single dispatch point shared by the script runner and the HTTP API."""
        kind = action["action"]
        handler = getattr(self, f"_act_{kind}", None)
        if handler is None:
            raise ValueError(f"unknown action {kind!r}")
        return handler(action)

    def _act_instantiate(self, a: dict) -> dict:
        caps = {k: set(v) for k, v in a.get("capability_requirements", {}).items()}
        inst = self.orchestrator.instantiate(a["nsd"], capability_requirements=caps or None)
        if "as" in a:
            self.aliases[a["as"]] = inst.instance_id
        return {"instance": inst.instance_id, "state": inst.state}

    def _act_terminate(self, a: dict) -> dict:
        instance_id = self.resolve_instance(a["ref"])
        inst = self.orchestrator.terminate(instance_id)
        return {"instance": instance_id, "state": inst.state}

    def _act_migrate(self, a: dict) -> dict:
        instance_id = self.resolve_instance(a["ref"])
        inst = self.orchestrator.migrate(instance_id, a["vnf"], a["target_vim"])
        return {"instance": instance_id, "state": inst.state}

    def _act_scale(self, a: dict) -> dict:
        instance_id = self.resolve_instance(a["ref"])
        inst = self.orchestrator.scale(instance_id, a["vnf"], a["delta"])
        return {"instance": instance_id, "state": inst.state,
                "replicas": inst.replicas.get(a["vnf"], 1)}

    def _act_measure(self, a: dict) -> dict:
        src = self.resolve_endpoint(a["src"])
        dst = self.resolve_endpoint(a["dst"])
        m = self.fabric.start_measurement(
            src, dst, n_probes=a.get("n_probes", 20),
            burst_s=a.get("burst_s", 0.0))
        if "as" in a:
            self.measurements[a["as"]] = m
        return {"measuring": f"{src}->{dst}", "_measurement": m}

    def _act_hag_open(self, a: dict) -> dict:
        session = self.open_hag_session(a["paths"], a.get("policy", "round_robin"),
                                        session_id=a.get("as"))
        return {"session": session.session_id}

    def _act_hag_send(self, a: dict) -> dict:
        session = self.hag_sessions[a["ref"]]
        segments = session.send(a["bytes"])
        return {"session": a["ref"], "segments": len(segments)}

    def _act_hag_path(self, a: dict) -> dict:
        session = self.hag_sessions[a["ref"]]
        session.on_path_event(a["path"], a["event"])
        self.events.emit("hag_path_event", session=a["ref"], path=a["path"],
                         event=a["event"])
        return {"session": a["ref"], "path": a["path"], "event": a["event"]}

    def _act_link(self, a: dict) -> dict:
        self.fabric.set_link_up(a["link"], a["up"])
        self.events.emit("link_state", link=a["link"], up=a["up"])
        return {"link": a["link"], "up": a["up"]}

    def _act_slice(self, a: dict) -> dict:
        profile = SliceProfile(slice_id=a["slice_id"],
                               guaranteed_mbps=a["guaranteed_mbps"],
                               priority=a.get("priority", 0),
                               slice_tag=a.get("slice_tag"))
        installed = self.fabric.apply_slice(profile, a["path"])
        self.events.emit("slice_applied", slice=a["slice_id"],
                         guaranteed_mbps=a["guaranteed_mbps"])
        return {"slice": a["slice_id"], "installed": [list(x) for x in installed]}

    def _act_hot_plug(self, a: dict) -> dict:
        self.fabric.hot_plug(a["switch"], a["port"], a["endpoint"])
        self.events.emit("hot_plug", switch=a["switch"], port=a["port"],
                         endpoint=a["endpoint"])
        return {"endpoint": a["endpoint"]}

    def _act_inject_vim_fault(self, a: dict) -> dict:
        self.vims[a["vim"]].inject_fault(a["op"], a.get("count", 1))
        return {"vim": a["vim"], "op": a["op"]}

    def _act_inject_primitive_fault(self, a: dict) -> dict:
        self.primitives.fail_on(a["vnf"], a["primitive"], a.get("count", 1))
        return {"vnf": a["vnf"], "primitive": a["primitive"]}

    def _act_inject_collector_crash(self, a: dict) -> dict:
        self.telemetry.inject_crash(a["collector"])
        return {"collector": a["collector"]}

    # ---- snapshots -------------------------------------------------------------------

    def topology_snapshot(self) -> dict:
        switches = []
        for sw_id in sorted(self.fabric.switches):
            sw = self.fabric.switches[sw_id]
            switches.append({
                "id": sw_id, "mode": sw.mode,
                "ports": {p: list(att) for p, att in sorted(sw.ports.items())},
            })
        links = []
        for link_id in sorted(self.fabric.links):
            info = self.fabric.links[link_id]
            links.append({
                "id": link_id, "a": list(info["a"]), "b": list(info["b"]),
                "up": info["up"], "latency_us": info["latency_us"],
                "capacity_mbps": info["capacity_mbps"],
            })
        vims = []
        for vim_id in sorted(self.vims):
            vim = self.vims[vim_id]
            vims.append({
                "vim_id": vim_id, "site_class": vim.site_class,
                "auth_mode": vim.auth_mode,
                "attach": self.vim_attachment.get(vim_id),
                "nodes": len(vim.nodes),
                "used": vim.used_totals(),
            })
        access = []
        for pid in sorted(self.access_paths_cfg):
            p = self.access_paths_cfg[pid]
            access.append({"path_id": pid, "technology": p["technology"],
                           "latency_us": p["latency_us"],
                           "capacity_mbps": p["capacity_mbps"]})
        return {
            "scenario": self.cfg.get("id"),
            "switches": switches,
            "links": links,
            "vims": vims,
            "access_paths": access,
            "endpoints": sorted(self.fabric.endpoints),
        }


def build_world(source) -> World:
    return World(load_scenario(source))


def default_scenario_path() -> Path:
    return Path(str(resources.files("micromano").joinpath("scenarios/default.json")))


def default_scenario() -> dict:
    return load_scenario(default_scenario_path())
