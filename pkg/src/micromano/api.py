"""HTTP control and telemetry API over a live world.

All state mutations are funneled into the single simulation loop thread as
queued commands; request handlers block on the command's completion. The
loop advances virtual time at a configurable virtual-to-wall pace, so a
human (or the operator console) can watch state evolve and intervene.
Pausing the pacer freezes every observable value.

Event stream: ``GET /events/stream?since=<id>`` returns newline-delimited
JSON event objects with monotone ids; reconnecting with the last seen id
resumes without duplicates.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from micromano.mano import Infeasible, LifecycleError
from micromano.scenario import World
from micromano.sdn import CapacityExceeded, NoPath, UnknownEndpoint
from micromano.sim import US_PER_S
from micromano.telemetry import AuthRequired, EmptyRange, MetricSample
from micromano.vim import VimError

log = logging.getLogger(__name__)


class BindFailed(Exception):
    pass


class _Pacer(threading.Thread):
    """Single mutator thread: drains queued commands and advances the clock."""

    STEP_WALL_S = 0.02

    def __init__(self, world: World, pace: float):
        super().__init__(name="micromano-pacer", daemon=True)
        self.world = world
        self.pace = pace
        self.commands: "queue.Queue" = queue.Queue()
        self.paused = threading.Event()
        self._stop = threading.Event()

    def submit(self, fn):
        box = {"done": threading.Event()}

        def task():
            try:
                box["result"] = fn()
            except Exception as exc:
                box["error"] = exc
            box["done"].set()

        self.commands.put(task)
        if not box["done"].wait(timeout=30):
            raise TimeoutError("simulation loop did not answer")
        if "error" in box:
            raise box["error"]
        return box.get("result")

    def run(self):
        while not self._stop.is_set():
            while True:
                try:
                    task = self.commands.get_nowait()
                except queue.Empty:
                    break
                task()
            if not self.paused.is_set():
                step_us = max(1, round(self.STEP_WALL_S * self.pace * US_PER_S))
                self.world.clock.advance(self.world.clock.now + step_us)
            time.sleep(self.STEP_WALL_S)

    def stop(self):
        self._stop.set()


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, sort_keys=True) + "\n").encode()


class ApiServer:
    """Plain HTTP by default; pass cert/key paths for TLS-wrapped transport.
    ``control_secret``, when set, must accompany every mutating request in an
    X-Control-Secret header (the control plane is trusted-local otherwise)."""

    def __init__(self, world: World, host: str = "127.0.0.1", port: int = 8780,
                 pace: float = 1.0, tls_cert: str | None = None,
                 tls_key: str | None = None, control_secret: str | None = None):
        self.world = world
        self.pacer = _Pacer(world, pace)
        self.control_secret = control_secret
        handler = _make_handler(self)
        try:
            self.httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise BindFailed(f"cannot bind {host}:{port}: {exc}") from None
        self.tls = tls_cert is not None
        if tls_cert is not None:
            import ssl
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            context.load_cert_chain(tls_cert, tls_key)
            self.httpd.socket = context.wrap_socket(self.httpd.socket, server_side=True)
        self.host, self.port = self.httpd.server_address[:2]

    def start(self):
        self.pacer.start()
        self._http_thread = threading.Thread(
            target=self.httpd.serve_forever, name="micromano-http", daemon=True)
        self._http_thread.start()
        log.info("serving on %s:%s", self.host, self.port)

    def stop(self):
        self.httpd.shutdown()
        self.pacer.stop()

    def serve_forever(self):
        self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            self.stop()


_ERROR_STATUS = [
    (AuthRequired, 401),
    (KeyError, 404),
    (UnknownEndpoint, 404),
    ((Infeasible, CapacityExceeded, NoPath, LifecycleError, VimError), 409),
    ((ValueError, EmptyRange), 400),
]


def _status_for(exc: Exception) -> int:
    for types, status in _ERROR_STATUS:
        if isinstance(exc, types):
            return status
    return 500


def _make_handler(server: ApiServer):
    world = server.world
    pacer = server.pacer

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        # ---- plumbing -----------------------------------------------------

        def _reply(self, payload, status: int = 200):
            body = _json_bytes(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, exc: Exception):
            self._reply({"error": str(exc), "type": type(exc).__name__},
                        _status_for(exc))

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length))

        def _token(self) -> str:
            auth = self.headers.get("Authorization", "")
            return auth.removeprefix("Bearer ").strip()

        def _dispatch(self, method: str):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            params = {k: v[0] for k, v in parse_qs(url.query).items()}
            if (server.control_secret is not None and method in ("POST", "DELETE")
                    and parts[:1] != ["telemetry"]
                    and self.headers.get("X-Control-Secret") != server.control_secret):
                self._reply({"error": "control secret required",
                             "type": "ControlAuthRequired"}, 403)
                return
            try:
                handled = self._route(method, parts, params)
            except Exception as exc:
                if isinstance(exc, (BrokenPipeError, ConnectionResetError)):
                    return
                self._error(exc)
                return
            if not handled:
                self._reply({"error": "no such route", "path": url.path}, 404)

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def do_DELETE(self):
            self._dispatch("DELETE")

        # ---- routes ---------------------------------------------------------

        def _route(self, method: str, parts: list[str], params: dict) -> bool:
            if method == "GET" and parts == ["health"]:
                self._reply({"status": "ok", "scenario": world.cfg.get("id"),
                             "now_us": world.clock.now})
                return True
            if method == "GET" and parts == ["topology"]:
                self._reply(pacer.submit(world.topology_snapshot))
                return True
            if method == "GET" and parts == ["events", "stream"]:
                self._stream_events(params)
                return True
            if parts[:1] == ["ns"]:
                return self._route_ns(method, parts)
            if parts[:1] == ["sdn"]:
                return self._route_sdn(method, parts)
            if parts[:1] == ["telemetry"]:
                return self._route_telemetry(method, parts, params)
            if parts[:1] == ["hag"]:
                return self._route_hag(method, parts)
            if parts[:1] == ["control"]:
                return self._route_control(method, parts)
            if method == "GET" and parts == ["catalog"]:
                self._reply(pacer.submit(world.catalogue.list_services))
                return True
            return False

        def _route_ns(self, method: str, parts: list[str]) -> bool:
            if method == "POST" and len(parts) == 1:
                body = self._body()
                action = {"action": "instantiate", "nsd": body["nsd"]}
                if "capability_requirements" in body:
                    action["capability_requirements"] = body["capability_requirements"]
                if "as" in body:
                    action["as"] = body["as"]
                self._reply(pacer.submit(lambda: world.execute(action)), 201)
                return True
            if method == "GET" and len(parts) == 1:
                def snapshot():
                    return {i: world.orchestrator.instances[i].state
                            for i in sorted(world.orchestrator.instances)}
                self._reply(pacer.submit(snapshot))
                return True
            if len(parts) >= 2:
                ref = parts[1]
                if method == "GET" and len(parts) == 2:
                    self._reply(pacer.submit(
                        lambda: world.orchestrator.describe(world.resolve_instance(ref))))
                    return True
                if method == "DELETE" and len(parts) == 2:
                    self._reply(pacer.submit(
                        lambda: world.execute({"action": "terminate", "ref": ref})))
                    return True
                if method == "POST" and parts[2] == "scale":
                    body = self._body()
                    self._reply(pacer.submit(lambda: world.execute(
                        {"action": "scale", "ref": ref,
                         "vnf": body["vnf"], "delta": body["delta"]})))
                    return True
                if method == "POST" and parts[2] == "migrate":
                    body = self._body()
                    self._reply(pacer.submit(lambda: world.execute(
                        {"action": "migrate", "ref": ref,
                         "vnf": body["vnf"], "target_vim": body["target_vim"]})))
                    return True
            return False

        def _route_sdn(self, method: str, parts: list[str]) -> bool:
            if parts[:2] == ["sdn", "paths"]:
                if method == "GET" and len(parts) == 2:
                    self._reply(sorted(world.monitors))
                    return True
                if method == "POST" and len(parts) == 2:
                    body = self._body()
                    pacer.submit(lambda: world.add_path_monitor(
                        body["id"], body["src"], body["dst"]))
                    self._reply({"id": body["id"]}, 201)
                    return True
                if method == "GET" and len(parts) == 4 and parts[3] == "measure":
                    monitor = world.monitors.get(parts[2])
                    if monitor is None:
                        raise KeyError(f"no path monitor {parts[2]}")
                    m = monitor.latest
                    if m is None:
                        self._reply({"status": "pending"}, 202)
                        return True
                    self._reply({
                        "path": m.path, "latency_us": m.latency_us,
                        "jitter_us": m.jitter_us, "loss_rate": m.loss_rate,
                        "throughput_mbps": m.throughput_mbps,
                        "bandwidth_mbps": m.bandwidth_mbps,
                        "measured_at": m.measured_at,
                    })
                    return True
            return False

        def _route_telemetry(self, method: str, parts: list[str], params: dict) -> bool:
            svc = world.telemetry
            if method == "POST" and parts == ["telemetry", "signup"]:
                body = self._body()
                token = pacer.submit(lambda: svc.signup(body.get("client_name", "anonymous")))
                self._reply({"token_id": token.token_id, "secret": token.secret,
                             "expires_at": token.expires_at}, 201)
                return True
            if method == "POST" and parts == ["telemetry", "ingest"]:
                secret = self._token()
                body = self._body()
                samples = [MetricSample(source=s["source"], metric=s["metric"],
                                        value=s["value"], timestamp=s["timestamp"])
                           for s in body.get("samples", [])]

                def ingest():
                    if svc.authenticate(secret) != "ok":
                        raise AuthRequired("token required for ingest")
                    return svc.ingest(samples)

                result = pacer.submit(ingest)
                self._reply({"stored": result.stored,
                             "rejected": [[i, r] for i, r in result.rejected]})
                return True
            if method == "GET" and parts == ["telemetry", "query"]:
                secret = self._token()
                agg = params.get("agg", "raw")

                def do_query():
                    return svc.query(secret, params["source"], params["metric"],
                                     int(params.get("t0", 0)),
                                     int(params.get("t1", world.clock.now)), agg)

                result = pacer.submit(do_query)
                if agg == "raw":
                    self._reply({"points": [[ts, v] for ts, v in result]})
                else:
                    self._reply({"value": result})
                return True
            return False

        def _route_hag(self, method: str, parts: list[str]) -> bool:
            if method == "POST" and parts == ["hag", "sessions"]:
                body = self._body()
                action = {"action": "hag_open", "paths": body["paths"],
                          "policy": body.get("policy", "round_robin")}
                if "as" in body:
                    action["as"] = body["as"]
                self._reply(pacer.submit(lambda: world.execute(action)), 201)
                return True
            if len(parts) == 3 and parts[:2] == ["hag", "sessions"] and method == "GET":
                session = world.hag_sessions.get(parts[2])
                if session is None:
                    raise KeyError(f"no session {parts[2]}")
                self._reply(pacer.submit(session.stats))
                return True
            if len(parts) == 4 and parts[3] == "stats" and method == "GET":
                session = world.hag_sessions.get(parts[2])
                if session is None:
                    raise KeyError(f"no session {parts[2]}")
                self._reply(pacer.submit(session.stats))
                return True
            if len(parts) == 4 and parts[3] == "send" and method == "POST":
                body = self._body()
                self._reply(pacer.submit(lambda: world.execute(
                    {"action": "hag_send", "ref": parts[2], "bytes": body["bytes"]})))
                return True
            if (len(parts) == 6 and parts[3] == "path" and method == "POST"
                    and parts[5] in ("up", "down")):
                self._reply(pacer.submit(lambda: world.execute(
                    {"action": "hag_path", "ref": parts[2], "path": parts[4],
                     "event": parts[5]})))
                return True
            return False

        def _route_control(self, method: str, parts: list[str]) -> bool:
            if method == "POST" and parts == ["control", "pause"]:
                pacer.paused.set()
                self._reply({"paused": True, "now_us": world.clock.now})
                return True
            if method == "POST" and parts == ["control", "resume"]:
                pacer.paused.clear()
                self._reply({"paused": False})
                return True
            if method == "POST" and parts == ["control", "advance"]:
                body = self._body()
                step = round(float(body.get("seconds", 1.0)) * US_PER_S)
                pacer.submit(lambda: world.clock.advance(world.clock.now + step))
                self._reply({"now_us": world.clock.now})
                return True
            if method == "GET" and parts == ["control", "clock"]:
                self._reply({"now_us": world.clock.now,
                             "paused": pacer.paused.is_set()})
                return True
            return False

        # ---- event stream -----------------------------------------------------

        def _stream_events(self, params: dict) -> None:
            since = int(params.get("since", 0))
            max_wait_s = float(params.get("max_wait_s", 10.0))
            feed: "queue.Queue" = queue.Queue()
            world.events.subscribe(feed.put)
            try:
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Cache-Control", "no-store")
                self.send_header("Connection", "close")
                self.end_headers()
                last = since
                for entry in world.events.since(since):
                    self.wfile.write(_json_bytes(entry))
                    last = entry["id"]
                self.wfile.flush()
                deadline = time.monotonic() + max_wait_s
                while time.monotonic() < deadline:
                    try:
                        entry = feed.get(timeout=0.1)
                    except queue.Empty:
                        continue
                    if entry["id"] <= last:
                        continue
                    self.wfile.write(_json_bytes(entry))
                    self.wfile.flush()
                    last = entry["id"]
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                world.events.unsubscribe(feed.put)

    return Handler


def serve(world: World, host: str = "127.0.0.1", port: int = 8780,
          pace: float = 1.0) -> ApiServer:
    server = ApiServer(world, host=host, port=port, pace=pace)
    server.start()
    return server
