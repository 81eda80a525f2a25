"""VNF and network-service descriptors, their JSON schema, and the catalogue.

Descriptor documents are JSON objects with an explicit ``kind`` field
(``vnfd`` or ``nsd``) and ``version: 1``. The parser is total: any byte input
yields either a descriptor or a structured SchemaError / ValueError, never a
crash.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

PLACEMENT_CLASSES = ("edge", "regional", "any")


class SchemaError(Exception):
    """Missing or ill-typed field; ``path`` names where in the document."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class DuplicateId(Exception):
    pass


class DanglingReference(Exception):
    pass


@dataclass(frozen=True)
class ConfigPrimitive:
    name: str
    params: tuple[tuple[str, object], ...] = ()

    def as_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


@dataclass(frozen=True)
class VnfDescriptor:
    id: str
    name: str
    vcpu: int
    memory_mb: int
    storage_gb: int
    lifetime_s: int = 0
    connection_points: tuple[str, ...] = ()
    config_primitives: tuple[ConfigPrimitive, ...] = ()
    placement_class: str = "any"

    def __post_init__(self):
        if self.vcpu < 1:
            raise ValueError(f"vnfd {self.id}: vcpu must be >= 1")
        if self.memory_mb <= 0:
            raise ValueError(f"vnfd {self.id}: memory_mb must be > 0")
        if self.storage_gb < 0:
            raise ValueError(f"vnfd {self.id}: storage_gb must be >= 0")
        if self.lifetime_s < 0:
            raise ValueError(f"vnfd {self.id}: lifetime_s must be >= 0")
        if len(set(self.connection_points)) != len(self.connection_points):
            raise ValueError(f"vnfd {self.id}: connection point names must be unique")
        if self.placement_class not in PLACEMENT_CLASSES:
            raise ValueError(f"vnfd {self.id}: placement_class must be one of {PLACEMENT_CLASSES}")


@dataclass(frozen=True)
class LinkEndpoint:
    vnf_id: str
    connection_point: str


@dataclass(frozen=True)
class VirtualLinkDescriptor:
    id: str
    endpoints: tuple[LinkEndpoint, LinkEndpoint]
    required_mbps: float
    max_latency_us: int | None = None

    def __post_init__(self):
        if self.required_mbps <= 0:
            raise ValueError(f"link {self.id}: required_mbps must be > 0")
        a, b = self.endpoints
        if a == b:
            raise ValueError(f"link {self.id}: endpoints must reference distinct connection points")


@dataclass(frozen=True)
class NsDescriptor:
    id: str
    name: str
    vnfs: tuple[str, ...]
    links: tuple[VirtualLinkDescriptor, ...] = ()
    same_vim: tuple[tuple[str, str], ...] = ()
    different_vim: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.vnfs:
            raise ValueError(f"nsd {self.id}: vnf list must be non-empty")
        members = set(self.vnfs)
        for link in self.links:
            for ep in link.endpoints:
                if ep.vnf_id not in members:
                    raise ValueError(
                        f"nsd {self.id}: link {link.id} endpoint "
                        f"{ep.vnf_id}:{ep.connection_point} is not a member VNF")
        for pair in self.same_vim + self.different_vim:
            for v in pair:
                if v not in members:
                    raise ValueError(f"nsd {self.id}: colocation constraint names unknown VNF {v}")


def _require(doc: dict, key: str, types, path: str):
    if key not in doc:
        raise SchemaError(f"{path}.{key}", "missing required field")
    value = doc[key]
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise SchemaError(f"{path}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def _optional(doc: dict, key: str, types, path: str, default):
    if key not in doc or doc[key] is None:
        return default
    return _require(doc, key, types, path)


def parse_descriptor(document, vnfds: dict[str, VnfDescriptor] | None = None):
    """Parse a JSON descriptor document (text or already-decoded dict).

    When ``vnfds`` is given, NSD link endpoints are also checked against the
    referenced VNFDs' connection points.
    """
    if isinstance(document, (str, bytes, bytearray)):
        try:
            doc = json.loads(document)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError("$", f"not valid JSON: {exc}") from None
    else:
        doc = document
    if not isinstance(doc, dict):
        raise SchemaError("$", f"expected object, got {type(doc).__name__}")

    kind = _require(doc, "kind", str, "$")
    version = _require(doc, "version", int, "$")
    if version != 1:
        raise SchemaError("$.version", f"unsupported version {version}")
    if kind == "vnfd":
        return _parse_vnfd(doc)
    if kind == "nsd":
        return _parse_nsd(doc, vnfds)
    raise SchemaError("$.kind", f"unknown kind {kind!r}")


def _parse_vnfd(doc: dict) -> VnfDescriptor:
    primitives = []
    for i, p in enumerate(_optional(doc, "config_primitives", list, "$", [])):
        if not isinstance(p, dict):
            raise SchemaError(f"$.config_primitives[{i}]", "expected object")
        name = _require(p, "name", str, f"$.config_primitives[{i}]")
        params = _optional(p, "params", dict, f"$.config_primitives[{i}]", {})
        primitives.append(ConfigPrimitive(name=name, params=tuple(sorted(params.items()))))
    cps = _optional(doc, "connection_points", list, "$", [])
    for i, cp in enumerate(cps):
        if not isinstance(cp, str):
            raise SchemaError(f"$.connection_points[{i}]", "expected string")
    return VnfDescriptor(
        id=_require(doc, "id", str, "$"),
        name=_optional(doc, "name", str, "$", doc.get("id", "")),
        vcpu=_require(doc, "vcpu", int, "$"),
        memory_mb=_require(doc, "memory_mb", int, "$"),
        storage_gb=_require(doc, "storage_gb", int, "$"),
        lifetime_s=_optional(doc, "lifetime_s", int, "$", 0),
        connection_points=tuple(cps),
        config_primitives=tuple(primitives),
        placement_class=_optional(doc, "placement_class", str, "$", "any"),
    )


def _parse_nsd(doc: dict, vnfds: dict[str, VnfDescriptor] | None) -> NsDescriptor:
    vnf_ids = _require(doc, "vnfs", list, "$")
    for i, v in enumerate(vnf_ids):
        if not isinstance(v, str):
            raise SchemaError(f"$.vnfs[{i}]", "expected string")
    links = []
    for i, entry in enumerate(_optional(doc, "links", list, "$", [])):
        if not isinstance(entry, dict):
            raise SchemaError(f"$.links[{i}]", "expected object")
        path = f"$.links[{i}]"
        raw_eps = _require(entry, "endpoints", list, path)
        if len(raw_eps) != 2:
            raise SchemaError(f"{path}.endpoints", "expected exactly two endpoints")
        eps = []
        for j, ep in enumerate(raw_eps):
            if not isinstance(ep, dict):
                raise SchemaError(f"{path}.endpoints[{j}]", "expected object")
            eps.append(LinkEndpoint(
                vnf_id=_require(ep, "vnf_id", str, f"{path}.endpoints[{j}]"),
                connection_point=_require(ep, "connection_point", str, f"{path}.endpoints[{j}]"),
            ))
        links.append(VirtualLinkDescriptor(
            id=_require(entry, "id", str, path),
            endpoints=(eps[0], eps[1]),
            required_mbps=float(_require(entry, "required_mbps", (int, float), path)),
            max_latency_us=_optional(entry, "max_latency_us", int, path, None),
        ))
    colo = _optional(doc, "colocation_constraints", dict, "$", {})
    same = tuple(tuple(p) for p in colo.get("same_vim", []))
    diff = tuple(tuple(p) for p in colo.get("different_vim", []))
    nsd = NsDescriptor(
        id=_require(doc, "id", str, "$"),
        name=_optional(doc, "name", str, "$", doc.get("id", "")),
        vnfs=tuple(vnf_ids),
        links=tuple(links),
        same_vim=same,
        different_vim=diff,
    )
    if vnfds is not None:
        _check_connection_points(nsd, vnfds)
    return nsd


def _check_connection_points(nsd: NsDescriptor, vnfds: dict[str, VnfDescriptor]) -> None:
    for link in nsd.links:
        for ep in link.endpoints:
            vnfd = vnfds.get(ep.vnf_id)
            if vnfd is None:
                raise DanglingReference(f"nsd {nsd.id}: VNFD {ep.vnf_id} not in catalogue")
            if ep.connection_point not in vnfd.connection_points:
                raise ValueError(
                    f"nsd {nsd.id}: endpoint {ep.vnf_id}:{ep.connection_point} "
                    f"names a connection point absent from VNFD {ep.vnf_id}")


def serialize_descriptor(desc) -> dict:
    """Inverse of parse_descriptor, producing a version-1 document."""
    if isinstance(desc, VnfDescriptor):
        return {
            "kind": "vnfd", "version": 1, "id": desc.id, "name": desc.name,
            "vcpu": desc.vcpu, "memory_mb": desc.memory_mb, "storage_gb": desc.storage_gb,
            "lifetime_s": desc.lifetime_s,
            "connection_points": list(desc.connection_points),
            "config_primitives": [p.as_dict() for p in desc.config_primitives],
            "placement_class": desc.placement_class,
        }
    if isinstance(desc, NsDescriptor):
        return {
            "kind": "nsd", "version": 1, "id": desc.id, "name": desc.name,
            "vnfs": list(desc.vnfs),
            "links": [
                {
                    "id": l.id,
                    "endpoints": [
                        {"vnf_id": ep.vnf_id, "connection_point": ep.connection_point}
                        for ep in l.endpoints
                    ],
                    "required_mbps": l.required_mbps,
                    "max_latency_us": l.max_latency_us,
                }
                for l in desc.links
            ],
            "colocation_constraints": {
                "same_vim": [list(p) for p in desc.same_vim],
                "different_vim": [list(p) for p in desc.different_vim],
            },
        }
    raise TypeError(f"not a descriptor: {type(desc).__name__}")


@dataclass
class Catalogue:
    """Network Service Catalogue: registered VNFDs and NSDs with referential
    integrity (an NSD can only be registered once all its VNFDs are)."""

    vnfds: dict[str, VnfDescriptor] = field(default_factory=dict)
    nsds: dict[str, NsDescriptor] = field(default_factory=dict)

    def register(self, desc) -> None:
        if isinstance(desc, VnfDescriptor):
            if desc.id in self.vnfds:
                raise DuplicateId(f"vnfd {desc.id} already registered")
            self.vnfds[desc.id] = desc
        elif isinstance(desc, NsDescriptor):
            if desc.id in self.nsds:
                raise DuplicateId(f"nsd {desc.id} already registered")
            for vnf_id in desc.vnfs:
                if vnf_id not in self.vnfds:
                    raise DanglingReference(f"nsd {desc.id} references unknown VNFD {vnf_id}")
            _check_connection_points(desc, self.vnfds)
            self.nsds[desc.id] = desc
        else:
            raise TypeError(f"not a descriptor: {type(desc).__name__}")

    def nsd_demand(self, nsd_id: str) -> dict:
        nsd = self.nsds[nsd_id]
        vnfds = [self.vnfds[v] for v in nsd.vnfs]
        return {
            "vcpu": sum(v.vcpu for v in vnfds),
            "memory_mb": sum(v.memory_mb for v in vnfds),
            "storage_gb": sum(v.storage_gb for v in vnfds),
        }

    def list_services(self) -> list[dict]:
        out = []
        for nsd_id in sorted(self.nsds):
            nsd = self.nsds[nsd_id]
            demand = self.nsd_demand(nsd_id)
            out.append({
                "id": nsd.id, "name": nsd.name,
                "vnf_count": len(nsd.vnfs), "link_count": len(nsd.links),
                **demand,
            })
        return out


def load_directory(path) -> Catalogue:
    """Load every ``*.json`` descriptor under ``path``; VNFDs first so NSD
    references resolve regardless of file order."""
    docs = []
    for file in sorted(Path(path).glob("*.json")):
        docs.append(json.loads(file.read_text()))
    return load_documents(docs)


def load_documents(docs: list[dict]) -> Catalogue:
    cat = Catalogue()
    parsed = [parse_descriptor(d) for d in docs]
    for desc in parsed:
        if isinstance(desc, VnfDescriptor):
            cat.register(desc)
    for desc in parsed:
        if isinstance(desc, NsDescriptor):
            cat.register(desc)
    return cat
