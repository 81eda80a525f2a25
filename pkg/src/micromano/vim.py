"""Simulated virtual infrastructure managers behind one plugin interface.

Two auth modes model an open cloud and a restricted vendor cloud: the open
VIM exchanges a credential for an expiring session token, while the
restricted one passes a preshared credential on every call and never issues
tokens. The restricted VIM also exposes only a configurable subset of the
operation vocabulary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from micromano.catalog import VnfDescriptor
from micromano.sim import US_PER_S, SimClock

log = logging.getLogger(__name__)

FULL_CAPABILITIES = frozenset({"connect", "capabilities", "allocate", "release", "usage"})
RESTRICTED_DEFAULT = frozenset({"connect", "capabilities", "allocate", "release"})

AUTH_MODES = ("standard_token", "preshared_passthrough")
SITE_CLASSES = ("edge", "regional")
VM_STATES = ("building", "active", "migrating", "deleted")


class VimError(Exception):
    pass


class AuthFailed(VimError):
    pass


class UnknownVim(VimError):
    pass


class SessionExpired(VimError):
    pass


class CapabilityDenied(VimError):
    pass


class QuotaExceeded(VimError):
    pass


class UnknownVm(VimError):
    pass


class MigrationInProgress(VimError):
    pass


@dataclass
class ComputeNode:
    node_id: str
    vcpu_total: int
    memory_total_mb: int
    storage_total_gb: int
    flavor_tags: frozenset[str] = frozenset()
    vcpu_used: int = 0
    memory_used_mb: int = 0
    storage_used_gb: int = 0

    def fits(self, vnfd: VnfDescriptor) -> bool:
        return (self.vcpu_used + vnfd.vcpu <= self.vcpu_total
                and self.memory_used_mb + vnfd.memory_mb <= self.memory_total_mb
                and self.storage_used_gb + vnfd.storage_gb <= self.storage_total_gb)

    def free(self) -> dict:
        return {
            "vcpu": self.vcpu_total - self.vcpu_used,
            "memory_mb": self.memory_total_mb - self.memory_used_mb,
            "storage_gb": self.storage_total_gb - self.storage_used_gb,
        }


@dataclass
class VmRecord:
    vm_id: str
    vnfd_id: str
    node_id: str
    tenant_id: str
    state: str
    created_at: int
    vcpu: int
    memory_mb: int
    storage_gb: int
    active_at: int | None = None


@dataclass
class TenantUsage:
    tenant_id: str
    vcpu_seconds: float = 0.0
    gb_storage_seconds: float = 0.0
    vm_count: int = 0


@dataclass
class Session:
    vim_id: str
    auth_mode: str
    token: str | None = None
    expires_at: int | None = None
    credential: str | None = None


class Vim:
    """One simulated VIM: node inventory, VM lifecycle, usage accounting.

    Mutating calls are serialized by contract (the orchestrator is the single
    writer); capability and usage reads are snapshots.
    """

    def __init__(self, clock: SimClock, vim_id: str, nodes: list[ComputeNode],
                 auth_mode: str = "standard_token", site_class: str = "regional",
                 capability_set: frozenset[str] | None = None,
                 credential: str = "secret", token_ttl_s: int = 3600,
                 build_delay_us: int = 500_000):
        if auth_mode not in AUTH_MODES:
            raise ValueError(f"unknown auth_mode {auth_mode}")
        if site_class not in SITE_CLASSES:
            raise ValueError(f"unknown site_class {site_class}")
        if capability_set is None:
            capability_set = FULL_CAPABILITIES if auth_mode == "standard_token" else RESTRICTED_DEFAULT
        unknown = set(capability_set) - FULL_CAPABILITIES
        if unknown:
            raise ValueError(f"capability_set outside operation vocabulary: {sorted(unknown)}")
        self.clock = clock
        self.vim_id = vim_id
        self.auth_mode = auth_mode
        self.site_class = site_class
        self.capability_set = frozenset(capability_set)
        self.credential = credential
        self.token_ttl_s = token_ttl_s
        self.build_delay_us = build_delay_us
        self.nodes: dict[str, ComputeNode] = {n.node_id: n for n in nodes}
        self.vms: dict[str, VmRecord] = {}
        self.audit: list[dict] = []
        self._sessions: dict[str, int] = {}
        self._next_vm = 0
        self._usage_acc: dict[str, TenantUsage] = {}
        self._faults: dict[str, int] = {}

    # ---- auth -------------------------------------------------------------

    def connect(self, credential: str) -> Session:
        self._check_capability("connect")
        if credential != self.credential:
            self._log("auth_failed")
            raise AuthFailed(f"vim {self.vim_id}: bad credential")
        if self.auth_mode == "standard_token":
            token = f"{self.vim_id}-tok-{len(self._sessions)}"
            expires = self.clock.now + self.token_ttl_s * US_PER_S
            self._sessions[token] = expires
            self._log("token_issued", token=token, expires_at=expires)
            return Session(vim_id=self.vim_id, auth_mode=self.auth_mode,
                           token=token, expires_at=expires)
        # passthrough: no token state, credential rides along on every call
        self._log("passthrough_session")
        return Session(vim_id=self.vim_id, auth_mode=self.auth_mode, credential=credential)

    def _check_session(self, session: Session) -> None:
        if session.vim_id != self.vim_id:
            raise UnknownVim(f"session is for {session.vim_id}, not {self.vim_id}")
        if session.auth_mode == "standard_token":
            expires = self._sessions.get(session.token)
            if expires is None or self.clock.now >= expires:
                raise SessionExpired(f"vim {self.vim_id}: session expired")
        else:
            if session.credential != self.credential:
                raise AuthFailed(f"vim {self.vim_id}: bad preshared credential")

    def _check_capability(self, op: str) -> None:
        if op not in self.capability_set:
            raise CapabilityDenied(f"vim {self.vim_id}: operation {op} not permitted")

    # ---- fault injection (scenario-programmable) ---------------------------

    def inject_fault(self, op: str, count: int = 1) -> None:
        """Make the next ``count`` calls of ``op`` fail with VimError."""
        self._faults[op] = self._faults.get(op, 0) + count

    def _consume_fault(self, op: str) -> None:
        if self._faults.get(op, 0) > 0:
            self._faults[op] -= 1
            self._log("fault_injected", op=op)
            raise VimError(f"vim {self.vim_id}: injected {op} failure")

    # ---- inventory --------------------------------------------------------

    def capabilities(self, session: Session) -> dict:
        self._check_capability("capabilities")
        self._check_session(session)
        nodes = []
        for node_id in sorted(self.nodes):
            n = self.nodes[node_id]
            nodes.append({
                "node_id": n.node_id,
                "vcpu_total": n.vcpu_total, "vcpu_used": n.vcpu_used,
                "memory_total_mb": n.memory_total_mb, "memory_used_mb": n.memory_used_mb,
                "storage_total_gb": n.storage_total_gb, "storage_used_gb": n.storage_used_gb,
                "flavor_tags": sorted(n.flavor_tags),
                "free": n.free(),
            })
        free = {
            "vcpu": sum(n["free"]["vcpu"] for n in nodes),
            "memory_mb": sum(n["free"]["memory_mb"] for n in nodes),
            "storage_gb": sum(n["free"]["storage_gb"] for n in nodes),
        }
        return {
            "vim_id": self.vim_id,
            "site_class": self.site_class,
            "nodes": nodes,
            "free": free,
            "permitted_operations": sorted(self.capability_set),
            "usage_available": "usage" in self.capability_set,
        }

    def utilization(self) -> float:
        total = sum(n.vcpu_total for n in self.nodes.values())
        used = sum(n.vcpu_used for n in self.nodes.values())
        return used / total if total else 1.0

    # ---- lifecycle --------------------------------------------------------

    def allocate(self, session: Session, vnfd: VnfDescriptor,
                 hints: dict | None = None, tenant: str = "default") -> VmRecord:
        self._check_capability("allocate")
        self._check_session(session)
        self._consume_fault("allocate")
        node = self._select_node(vnfd, hints or {})
        if node is None:
            raise QuotaExceeded(f"vim {self.vim_id}: no node fits vnfd {vnfd.id}")
        node.vcpu_used += vnfd.vcpu
        node.memory_used_mb += vnfd.memory_mb
        node.storage_used_gb += vnfd.storage_gb
        vm_id = f"{self.vim_id}-vm-{self._next_vm}"
        self._next_vm += 1
        vm = VmRecord(vm_id=vm_id, vnfd_id=vnfd.id, node_id=node.node_id,
                      tenant_id=tenant, state="building", created_at=self.clock.now,
                      vcpu=vnfd.vcpu, memory_mb=vnfd.memory_mb, storage_gb=vnfd.storage_gb)
        self.vms[vm_id] = vm
        self._usage_acc.setdefault(tenant, TenantUsage(tenant_id=tenant))
        self._log("allocate", vm_id=vm_id, vnfd=vnfd.id, node=node.node_id, tenant=tenant)
        self.clock.schedule_in(self.build_delay_us, lambda: self._build_done(vm_id),
                               label=f"vim:{self.vim_id}:build:{vm_id}")
        return vm

    def _build_done(self, vm_id: str) -> None:
        vm = self.vms.get(vm_id)
        if vm is not None and vm.state == "building":
            vm.state = "active"
            vm.active_at = self.clock.now
            self._log("vm_active", vm_id=vm_id)

    def _select_node(self, vnfd: VnfDescriptor, hints: dict) -> ComputeNode | None:
        # first-fit over nodes sorted by node_id after flavor filtering
        candidates = [self.nodes[k] for k in sorted(self.nodes)]
        if "node_id" in hints:
            candidates = [n for n in candidates if n.node_id == hints["node_id"]]
        if "flavor" in hints:
            candidates = [n for n in candidates if hints["flavor"] in n.flavor_tags]
        for node in candidates:
            if node.fits(vnfd):
                return node
        return None

    def release(self, session: Session, vm_id: str) -> None:
        self._check_capability("release")
        self._check_session(session)
        self._consume_fault("release")
        vm = self.vms.get(vm_id)
        if vm is None or vm.state == "deleted":
            raise UnknownVm(f"vim {self.vim_id}: no such VM {vm_id}")
        if vm.state == "migrating":
            raise MigrationInProgress(f"vim {self.vim_id}: VM {vm_id} is migrating")
        node = self.nodes[vm.node_id]
        node.vcpu_used -= vm.vcpu
        node.memory_used_mb -= vm.memory_mb
        node.storage_used_gb -= vm.storage_gb
        self._fold_usage(vm)
        vm.state = "deleted"
        self._log("release", vm_id=vm_id)

    def mark_migrating(self, vm_id: str, migrating: bool) -> None:
        """Orchestrator-internal: guards a VM against release mid-migration."""
        vm = self.vms.get(vm_id)
        if vm is None or vm.state == "deleted":
            raise UnknownVm(f"vim {self.vim_id}: no such VM {vm_id}")
        vm.state = "migrating" if migrating else "active"

    # ---- usage ------------------------------------------------------------

    def _fold_usage(self, vm: VmRecord) -> None:
        if vm.active_at is None:
            return
        acc = self._usage_acc.setdefault(vm.tenant_id, TenantUsage(tenant_id=vm.tenant_id))
        active_s = (self.clock.now - vm.active_at) / US_PER_S
        acc.vcpu_seconds += vm.vcpu * active_s
        acc.gb_storage_seconds += vm.storage_gb * active_s

    def usage(self, session: Session, tenant: str) -> TenantUsage:
        self._check_capability("usage")
        self._check_session(session)
        acc = self._usage_acc.get(tenant, TenantUsage(tenant_id=tenant))
        live = [vm for vm in self.vms.values()
                if vm.tenant_id == tenant and vm.state != "deleted"]
        out = TenantUsage(tenant_id=tenant,
                          vcpu_seconds=acc.vcpu_seconds,
                          gb_storage_seconds=acc.gb_storage_seconds,
                          vm_count=len(live))
        for vm in live:
            if vm.active_at is not None:
                active_s = (self.clock.now - vm.active_at) / US_PER_S
                out.vcpu_seconds += vm.vcpu * active_s
                out.gb_storage_seconds += vm.storage_gb * active_s
        return out

    # ---- accounting helpers ------------------------------------------------

    def used_totals(self) -> dict:
        return {
            "vcpu": sum(n.vcpu_used for n in self.nodes.values()),
            "memory_mb": sum(n.memory_used_mb for n in self.nodes.values()),
            "storage_gb": sum(n.storage_used_gb for n in self.nodes.values()),
        }

    def live_vm_demand(self) -> dict:
        live = [vm for vm in self.vms.values() if vm.state != "deleted"]
        return {
            "vcpu": sum(vm.vcpu for vm in live),
            "memory_mb": sum(vm.memory_mb for vm in live),
            "storage_gb": sum(vm.storage_gb for vm in live),
        }

    def _log(self, kind: str, **data) -> None:
        self.audit.append({"at": self.clock.now, "vim": self.vim_id, "kind": kind, **data})
        log.debug("vim %s %s %s", self.vim_id, kind, data)


def vim_from_config(clock: SimClock, cfg: dict) -> Vim:
    """Build a Vim from a scenario config block."""
    nodes = [
        ComputeNode(
            node_id=n["node_id"],
            vcpu_total=n["vcpu"],
            memory_total_mb=n["memory_mb"],
            storage_total_gb=n["storage_gb"],
            flavor_tags=frozenset(n.get("flavor_tags", [])),
        )
        for n in cfg["nodes"]
    ]
    caps = cfg.get("capability_set")
    return Vim(
        clock, cfg["vim_id"], nodes,
        auth_mode=cfg.get("auth_mode", "standard_token"),
        site_class=cfg.get("site_class", "regional"),
        capability_set=frozenset(caps) if caps is not None else None,
        credential=cfg.get("credential", "secret"),
        token_ttl_s=cfg.get("token_ttl_s", 3600),
        build_delay_us=cfg.get("build_delay_us", 500_000),
    )
