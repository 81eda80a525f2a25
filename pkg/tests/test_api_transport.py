"""Deployment-option transports: TLS-wrapped HTTP and the control secret."""

import datetime
import json
import ssl
import urllib.error
import urllib.request

import pytest

from micromano.api import ApiServer
from micromano.scenario import build_world, default_scenario_path


def _self_signed(tmp_path):
    cryptography = pytest.importorskip("cryptography")
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import rsa
    from cryptography.x509.oid import NameOID

    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "localhost")])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (x509.CertificateBuilder()
            .subject_name(name).issuer_name(name)
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now)
            .not_valid_after(now + datetime.timedelta(days=1))
            .add_extension(x509.SubjectAlternativeName(
                [x509.DNSName("localhost"), x509.IPAddress(
                    __import__("ipaddress").ip_address("127.0.0.1"))]), critical=False)
            .sign(key, hashes.SHA256()))
    cert_path = tmp_path / "cert.pem"
    key_path = tmp_path / "key.pem"
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.TraditionalOpenSSL,
        serialization.NoEncryption()))
    return cert_path, key_path


def test_https_transport(tmp_path):
    cert_path, key_path = _self_signed(tmp_path)
    world = build_world(default_scenario_path())
    server = ApiServer(world, host="127.0.0.1", port=0,
                       tls_cert=str(cert_path), tls_key=str(key_path))
    server.pacer.paused.set()
    server.start()
    try:
        context = ssl.create_default_context(cafile=str(cert_path))
        with urllib.request.urlopen(
                f"https://127.0.0.1:{server.port}/health",
                context=context, timeout=10) as resp:
            body = json.loads(resp.read())
        assert body["status"] == "ok"
    finally:
        server.stop()


def test_control_secret_gates_mutations():
    world = build_world(default_scenario_path())
    server = ApiServer(world, host="127.0.0.1", port=0, control_secret="s3cret")
    server.pacer.paused.set()
    server.start()
    base = f"http://127.0.0.1:{server.port}"
    try:
        # reads stay open
        with urllib.request.urlopen(f"{base}/topology", timeout=10) as resp:
            assert resp.status == 200
        # mutation without the header is refused
        req = urllib.request.Request(f"{base}/ns", data=b'{"nsd": "edge-cache"}',
                                     method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            urllib.request.urlopen(req, timeout=10)
            raise AssertionError("expected 403")
        except urllib.error.HTTPError as exc:
            assert exc.code == 403
        # with the header it goes through
        req = urllib.request.Request(
            f"{base}/ns", data=b'{"nsd": "edge-cache"}', method="POST",
            headers={"Content-Type": "application/json", "X-Control-Secret": "s3cret"})
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert resp.status == 201
        # telemetry signup keeps its own token scheme, not the control secret
        req = urllib.request.Request(
            f"{base}/telemetry/signup", data=b'{"client_name": "x"}', method="POST",
            headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert resp.status == 201
    finally:
        server.stop()
