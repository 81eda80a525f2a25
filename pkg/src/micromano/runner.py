"""Scripted experiment runner: executes a scenario's timed actions against a
fresh world and emits a deterministic report (JSON) plus a metric export
(CSV). Identical scenario + seed always produces byte-identical output; no
wall-clock values enter the report.
"""

from __future__ import annotations

import io
import json
import logging
from pathlib import Path

from micromano.scenario import World, load_scenario
from micromano.sim import US_PER_S

log = logging.getLogger(__name__)


def run(source, seed: int | None = None) -> dict:
    cfg = load_scenario(source)
    if seed is not None:
        cfg = dict(cfg, seed=seed)
    world = World(cfg)
    records: list[dict] = []
    halt = {"stop": False}

    def fire(action: dict, record: dict) -> None:
        if halt["stop"]:
            record["result"] = {"skipped": "halted"}
            return
        try:
            result = world.execute(action)
        except Exception as exc:  # action-level failure: record, keep going
            record["result"] = {"error": f"{type(exc).__name__}: {exc}"}
            if cfg.get("halt_on_error"):
                halt["stop"] = True
            return
        measurement = result.pop("_measurement", None)
        record["result"] = result
        if measurement is not None:
            def done(m, rec=record):
                rec["result"] = {
                    "path": m.path,
                    "latency_us": m.latency_us,
                    "jitter_us": m.jitter_us,
                    "loss_rate": m.loss_rate,
                    "throughput_mbps": m.throughput_mbps,
                    "bandwidth_mbps": m.bandwidth_mbps,
                }
            if measurement.done:
                done(measurement.result)
            else:
                measurement.on_done = done

    for action in cfg["script"]:
        record = {"at_s": action["at_s"],
                  "action": {k: v for k, v in action.items() if k != "at_s"},
                  "result": {"pending": True}}
        records.append(record)
        world.clock.schedule(round(action["at_s"] * US_PER_S),
                             lambda a=action, r=record: fire(a, r),
                             label=f"script:{action['action']}")

    end_us = round(cfg.get("end_s", _default_end_s(cfg)) * US_PER_S)
    world.clock.run_until_idle(max_time=end_us)

    report = _assemble_report(cfg, world, records)
    return report


def _default_end_s(cfg: dict) -> float:
    times = [a["at_s"] for a in cfg["script"]]
    return (max(times) if times else 0.0) + 3.0


def _assemble_report(cfg: dict, world: World, records: list[dict]) -> dict:
    assertions = []
    for record in records:
        action = record["action"]
        expect = action.get("expect")
        if expect is None:
            continue
        outcome = record["result"]
        instance_id = outcome.get("instance") if isinstance(outcome, dict) else None
        final_state = None
        reached = []
        if instance_id is not None and instance_id in world.orchestrator.instances:
            inst = world.orchestrator.instances[instance_id]
            final_state = inst.state
            reached = ["created"] + [to for _, to, _ in inst.transitions]
        passed = expect in reached  # the expected state was reached at some point
        assertions.append({
            "action": action["action"], "expect": expect,
            "observed": final_state, "passed": passed,
        })
        record["result"] = dict(outcome, final_state=final_state)

    kpis = _evaluate_kpis(cfg, world, records)

    instances = {}
    for instance_id in sorted(world.orchestrator.instances):
        desc = world.orchestrator.describe(instance_id)
        desc.pop("audit")  # full event list is already in the report
        instances[instance_id] = desc

    report = {
        "scenario": cfg.get("id"),
        "seed": cfg["seed"],
        "virtual_end_us": world.clock.now,
        "actions": records,
        "assertions": assertions,
        "kpis": kpis,
        "instances": instances,
        "leak_check": world.orchestrator.leak_check(),
        "supervisor_events": [
            {"ts": e.timestamp, "collector": e.collector_id, "kind": e.kind}
            for e in world.telemetry.events
        ],
        "events": world.events.entries,
        "metrics_csv": metrics_csv(world),
        "ok": all(a["passed"] for a in assertions),
    }
    return report


def _evaluate_kpis(cfg: dict, world: World, records: list[dict]) -> list[dict]:
    targets = cfg.get("kpi_targets", {})
    out = []
    for record in records:
        action = record["action"]
        kpi = action.get("kpi")
        if kpi is None or kpi not in targets:
            continue
        target = targets[kpi]
        measured = None
        if kpi == "e2e_latency_ms":
            latency_us = record["result"].get("latency_us") if isinstance(record["result"], dict) else None
            if latency_us is not None:
                measured = latency_us / 1000.0
            passed = measured is not None and measured <= target
        elif kpi == "peak_rate_mbps":
            ref = action.get("ref") or action.get("as")
            session = world.hag_sessions.get(ref)
            if session is not None:
                measured = session.stats()["goodput_mbps"]
            passed = measured is not None and measured >= target
        else:
            passed = False
        out.append({"kpi": kpi, "target": target, "measured": measured,
                    "passed": passed})
    return out


def metrics_csv(world: World) -> str:
    buf = io.StringIO()
    buf.write("source,metric,timestamp_us,value\n")
    for source, metric in world.telemetry.metrics.sources():
        for ts, value in world.telemetry.metrics.query(source, metric, 0,
                                                       world.clock.now, "raw"):
            buf.write(f"{source},{metric},{ts},{value!r}\n")
    return buf.getvalue()


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(report: dict, path: str | Path, csv_path: str | Path | None = None) -> None:
    Path(path).write_text(report_json(report))
    if csv_path is not None:
        Path(csv_path).write_text(report["metrics_csv"])
