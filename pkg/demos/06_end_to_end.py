#!/usr/bin/env python3
"""The whole stack: run the shipped seven-testbed scenario and read the
report like an operator would. The script instantiates a split core, an edge
cache and a cloud-RAN split, migrates the cache to the edge, pushes a
multipath transfer, and checks the 5G KPI targets against what the simulated
deployment actually achieves."""

from micromano.runner import run
from micromano.scenario import default_scenario_path


def main():
    report = run(default_scenario_path())

    print(f"scenario {report['scenario']} (seed {report['seed']}) ran to "
          f"{report['virtual_end_us'] / 1e6:.1f} virtual seconds\n")

    print("script outcomes:")
    for rec in report["actions"]:
        action = rec["action"]
        label = action["action"]
        if "as" in action:
            label += f" [{action['as']}]"
        summary = {k: v for k, v in rec["result"].items()
                   if k in ("instance", "final_state", "latency_us", "session",
                            "segments", "replicas", "error")}
        print(f"  t={rec['at_s']:>5}s {label:28s} {summary}")

    print("\nmeasured vs 5G targets:")
    for kpi in report["kpis"]:
        verdict = "met" if kpi["passed"] else "NOT met (aspirational target)"
        print(f"  {kpi['kpi']}: measured {kpi['measured']} vs target "
              f"{kpi['target']} -> {verdict}")

    before = next(r["result"]["latency_us"] for r in report["actions"]
                  if r["action"].get("as") == "lat-before")
    after = next(r["result"]["latency_us"] for r in report["actions"]
                 if r["action"].get("as") == "lat-after")
    print(f"\nedge migration effect: client path latency {before:.0f} us -> "
          f"{after:.0f} us")

    crash_events = [e for e in report["supervisor_events"] if e["kind"] != "started"]
    print(f"supervisor handled: {[(e['collector'], e['kind']) for e in crash_events]}")

    print(f"\nleak check: "
          f"{'clean' if all(c['consistent'] for c in report['leak_check'].values()) else 'LEAK'}")
    print(f"{len(report['events'])} events, "
          f"{report['metrics_csv'].count(chr(10)) - 1} metric rows")
    print("\n(the same world serves interactively: micromano serve default "
          "--bind 127.0.0.1:8780)")


if __name__ == "__main__":
    main()
