"""Command line: scripted runs, the live API server, and catalogue tools.

    micromano run <scenario.json> [--seed N] [--report out.json] [--csv out.csv]
    micromano serve <scenario.json> [--bind host:port] [--pace R] [--seed N]
    micromano catalog validate <file>
    micromano catalog list --dir <path>

Set MICROMANO_LOG to a logging level name (debug, info, ...) for diagnostics.
``default`` can be used in place of a scenario path to run the shipped
seven-testbed scenario.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from micromano import catalog
from micromano.runner import run, write_report
from micromano.scenario import build_world, default_scenario_path, load_scenario


def _setup_logging() -> None:
    level = os.environ.get("MICROMANO_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _scenario_source(arg: str):
    if arg == "default":
        return default_scenario_path()
    return arg


def cmd_run(args) -> int:
    report = run(_scenario_source(args.scenario), seed=args.seed)
    if args.report:
        write_report(report, args.report, csv_path=args.csv)
    elif args.csv:
        Path(args.csv).write_text(report["metrics_csv"])
    if not args.quiet:
        print(f"scenario {report['scenario']} seed {report['seed']} "
              f"virtual end {report['virtual_end_us'] / 1e6:.3f}s")
        for a in report["assertions"]:
            mark = "ok" if a["passed"] else "FAIL"
            print(f"  [{mark}] {a['action']} expected {a['expect']} observed {a['observed']}")
        for k in report["kpis"]:
            mark = "met" if k["passed"] else "not met"
            print(f"  [kpi] {k['kpi']}: measured {k['measured']} target {k['target']} ({mark})")
        if not args.report:
            print(f"  events: {len(report['events'])}, "
                  f"metric rows: {report['metrics_csv'].count(chr(10)) - 1}")
    return 0 if report["ok"] else 1


def cmd_serve(args) -> int:
    from micromano.api import ApiServer, BindFailed

    host, _, port = args.bind.partition(":")
    cfg = load_scenario(_scenario_source(args.scenario))
    if args.seed is not None:
        cfg = dict(cfg, seed=args.seed)
    world = build_world(cfg)
    try:
        server = ApiServer(world, host=host or "127.0.0.1",
                           port=int(port or 8780), pace=args.pace,
                           tls_cert=args.tls_cert, tls_key=args.tls_key,
                           control_secret=args.control_secret)
    except BindFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    scheme = "https" if server.tls else "http"
    print(f"micromano API on {scheme}://{server.host}:{server.port} "
          f"(scenario {cfg.get('id')}, pace {args.pace}x)", flush=True)
    server.serve_forever()
    return 0


def cmd_catalog_validate(args) -> int:
    try:
        text = Path(args.file).read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        desc = catalog.parse_descriptor(text)
    except (catalog.SchemaError, ValueError) as exc:
        print(f"invalid: {exc}")
        return 1
    kind = "vnfd" if isinstance(desc, catalog.VnfDescriptor) else "nsd"
    print(f"valid {kind}: {desc.id}")
    return 0


def cmd_catalog_list(args) -> int:
    if not Path(args.dir).is_dir():
        print(f"error: {args.dir} is not a directory", file=sys.stderr)
        return 2
    try:
        cat = catalog.load_directory(args.dir)
    except (catalog.SchemaError, catalog.DanglingReference, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{len(cat.vnfds)} VNFDs, {len(cat.nsds)} NSDs")
    for summary in cat.list_services():
        print(f"  {summary['id']}: {summary['vnf_count']} VNFs, "
              f"{summary['vcpu']} vCPU, {summary['memory_mb']} MB, "
              f"{summary['storage_gb']} GB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="micromano")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario script and report")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--report", default=None, help="write JSON report here")
    p_run.add_argument("--csv", default=None, help="write metric CSV here")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_serve = sub.add_parser("serve", help="serve the control/telemetry API")
    p_serve.add_argument("scenario")
    p_serve.add_argument("--bind", default="127.0.0.1:8780")
    p_serve.add_argument("--pace", type=float, default=1.0,
                         help="virtual seconds per wall second")
    p_serve.add_argument("--seed", type=int, default=None)
    p_serve.add_argument("--tls-cert", default=None, help="serve HTTPS with this cert")
    p_serve.add_argument("--tls-key", default=None)
    p_serve.add_argument("--control-secret", default=None,
                         help="require X-Control-Secret on mutating requests")
    p_serve.set_defaults(fn=cmd_serve)

    p_cat = sub.add_parser("catalog", help="descriptor tools")
    cat_sub = p_cat.add_subparsers(dest="catalog_command", required=True)
    p_val = cat_sub.add_parser("validate")
    p_val.add_argument("file")
    p_val.set_defaults(fn=cmd_catalog_validate)
    p_list = cat_sub.add_parser("list")
    p_list.add_argument("--dir", required=True)
    p_list.set_defaults(fn=cmd_catalog_list)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
