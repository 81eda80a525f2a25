"""Descriptor parsing, validation, registration, and catalogue summaries."""

import json
import random

import pytest

from micromano.catalog import (
    Catalogue, DanglingReference, DuplicateId, SchemaError,
    VnfDescriptor, load_directory, parse_descriptor, serialize_descriptor,
)

MINIMAL_VNFD = {
    "kind": "vnfd", "version": 1, "id": "v1",
    "vcpu": 1, "memory_mb": 1024, "storage_gb": 10, "lifetime_s": 0,
}


def _vnfd(id="v1", vcpu=1, cps=("mgmt", "data"), **kw):
    doc = dict(MINIMAL_VNFD, id=id, vcpu=vcpu, connection_points=list(cps), **kw)
    return doc


def _nsd(id="ns1", vnfs=("v1",), links=(), **kw):
    return {"kind": "nsd", "version": 1, "id": id, "vnfs": list(vnfs),
            "links": list(links), **kw}


def test_parse_minimal_vnfd():
    vnfd = parse_descriptor(json.dumps(MINIMAL_VNFD))
    assert isinstance(vnfd, VnfDescriptor)
    assert vnfd.id == "v1"
    assert vnfd.config_primitives == ()
    assert vnfd.placement_class == "any"


def test_parse_vnfd_zero_vcpu_is_value_error():
    with pytest.raises(ValueError, match="vcpu"):
        parse_descriptor(json.dumps(dict(MINIMAL_VNFD, vcpu=0)))


def test_parse_missing_field_reports_path():
    doc = dict(MINIMAL_VNFD)
    del doc["memory_mb"]
    with pytest.raises(SchemaError) as exc:
        parse_descriptor(json.dumps(doc))
    assert exc.value.path == "$.memory_mb"


def test_nsd_link_unknown_connection_point_names_endpoint():
    vnfd = parse_descriptor(_vnfd("v1", cps=("eth0",)))
    nsd_doc = _nsd(links=[{
        "id": "l1",
        "endpoints": [
            {"vnf_id": "v1", "connection_point": "eth0"},
            {"vnf_id": "v1", "connection_point": "eth9"},
        ],
        "required_mbps": 10,
    }])
    with pytest.raises(ValueError, match="v1:eth9"):
        parse_descriptor(nsd_doc, vnfds={"v1": vnfd})


def test_nsd_link_endpoint_must_be_member_vnf():
    nsd_doc = _nsd(vnfs=["v1"], links=[{
        "id": "l1",
        "endpoints": [
            {"vnf_id": "v1", "connection_point": "a"},
            {"vnf_id": "v9", "connection_point": "b"},
        ],
        "required_mbps": 5,
    }])
    with pytest.raises(ValueError, match="v9"):
        parse_descriptor(nsd_doc)


def test_register_vnfd_then_nsd():
    cat = Catalogue()
    cat.register(parse_descriptor(_vnfd("v1")))
    cat.register(parse_descriptor(_nsd("ns1", vnfs=["v1"])))
    assert "v1" in cat.vnfds and "ns1" in cat.nsds


def test_register_nsd_with_unknown_vnfd_is_dangling():
    cat = Catalogue()
    with pytest.raises(DanglingReference):
        cat.register(parse_descriptor(_nsd("ns1", vnfs=["v9"])))


def test_register_duplicate_id():
    cat = Catalogue()
    cat.register(parse_descriptor(_vnfd("v1")))
    with pytest.raises(DuplicateId):
        cat.register(parse_descriptor(_vnfd("v1")))


def test_list_services_empty():
    assert Catalogue().list_services() == []


def test_list_services_aggregates_demand():
    cat = Catalogue()
    cat.register(parse_descriptor(_vnfd("v1", vcpu=1)))
    cat.register(parse_descriptor(_vnfd("v2", vcpu=3)))
    cat.register(parse_descriptor(_nsd("ns1", vnfs=["v1", "v2"])))
    (summary,) = cat.list_services()
    assert summary["vcpu"] == 4
    assert summary["memory_mb"] == 2048


def test_aggregates_match_fresh_recompute():
    rng = random.Random(404)
    cat = Catalogue()
    ids = []
    for i in range(12):
        vid = f"v{i}"
        cat.register(parse_descriptor(_vnfd(
            vid, vcpu=rng.randint(1, 16),
            memory_mb=rng.choice([512, 1024, 4096]),
            storage_gb=rng.randint(0, 100))))
        ids.append(vid)
    members = rng.sample(ids, 5)
    cat.register(parse_descriptor(_nsd("nsX", vnfs=members)))
    (summary,) = cat.list_services()
    # independent recompute straight from the registered descriptors
    assert summary["vcpu"] == sum(cat.vnfds[v].vcpu for v in members)
    assert summary["memory_mb"] == sum(cat.vnfds[v].memory_mb for v in members)
    assert summary["storage_gb"] == sum(cat.vnfds[v].storage_gb for v in members)


def test_round_trip_serialize_parse():
    docs = [
        _vnfd("v1", cps=("mgmt", "data"), config_primitives=[
            {"name": "init", "params": {"mode": "fast", "retries": 2}},
            {"name": "start", "params": {}},
        ], placement_class="edge", lifetime_s=600),
        _nsd("ns1", vnfs=["v1"], links=[{
            "id": "l1",
            "endpoints": [
                {"vnf_id": "v1", "connection_point": "mgmt"},
                {"vnf_id": "v1", "connection_point": "data"},
            ],
            "required_mbps": 25.0, "max_latency_us": 5000,
        }], colocation_constraints={"same_vim": [["v1", "v1"]]}),
    ]
    for doc in docs:
        parsed = parse_descriptor(json.dumps(doc))
        again = parse_descriptor(json.dumps(serialize_descriptor(parsed)))
        assert again == parsed


@pytest.mark.parametrize("junk", [
    b"\x00\xff\xfe garbage", "{not json", "[]", "42", '{"kind": "vnfd"}',
    '{"kind": "weird", "version": 1}', '{"kind": "vnfd", "version": 2, "id": "x"}',
    '{"kind": "vnfd", "version": 1, "id": 5, "vcpu": 1, "memory_mb": 1, "storage_gb": 0}',
])
def test_parser_total_on_junk(junk):
    with pytest.raises((SchemaError, ValueError)):
        parse_descriptor(junk)


def test_parser_total_on_random_bytes():
    rng = random.Random(99)
    for _ in range(200):
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        try:
            parse_descriptor(blob)
        except (SchemaError, ValueError):
            pass


def test_load_directory_resolves_regardless_of_file_order(tmp_path):
    # NSD file sorts before its VNFD file
    (tmp_path / "a_ns.json").write_text(json.dumps(_nsd("ns1", vnfs=["v1"])))
    (tmp_path / "z_vnf.json").write_text(json.dumps(_vnfd("v1")))
    cat = load_directory(tmp_path)
    assert set(cat.nsds) == {"ns1"}
    assert set(cat.vnfds) == {"v1"}


def test_referential_integrity_never_dangling():
    cat = Catalogue()
    cat.register(parse_descriptor(_vnfd("v1")))
    cat.register(parse_descriptor(_vnfd("v2")))
    cat.register(parse_descriptor(_nsd("ns1", vnfs=["v1", "v2"])))
    for nsd in cat.nsds.values():
        for v in nsd.vnfs:
            assert v in cat.vnfds
