"""Command-line entry points.

    searchgate serve --config gateway.json [--listen ...] [--backend ...]
                     [--tls-cert ...] [--tls-key ...]
    searchgate store --listen 127.0.0.1:9200 [--oplog path]
    searchgate bench run --target <url|embedded> --mode <direct|gateway>
                     --docs N --seed S --threads K --out samples.json
    searchgate bench compare direct.json gated.json [--out report.json]
    searchgate ship --source <path|-> --target <url> --index <name>
                     [--batch 500] [--tls-ca path] [--user u] [--password p]
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading

from .bench import embedded as bench_embedded
from .bench import report as bench_report
from .bench import runner as bench_runner
from .config import load_config, with_overrides
from .gateway import GatewayCore
from .server import make_gateway_server, make_store_server
from .shipper import ShipConfig, ship
from .store import MiniStore

logger = logging.getLogger(__name__)


def _serve_forever(server) -> int:
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    with server:
        print(f"listening on {server.base_url}", flush=True)
        stop.wait()
    return 0


def cmd_serve(args) -> int:
    config = load_config(args.config)
    config = with_overrides(config, listen=args.listen, backend=args.backend,
                            tls_cert=args.tls_cert, tls_key=args.tls_key)
    core = GatewayCore.from_config(config)
    return _serve_forever(make_gateway_server(core))


def cmd_store(args) -> int:
    store = MiniStore(oplog_path=args.oplog)
    return _serve_forever(make_store_server(store, args.listen))


def cmd_bench_run(args) -> int:
    scenario = bench_runner.Scenario(
        doc_count=args.docs,
        bulk_size=args.bulk_size,
        query_count=args.queries,
        client_threads=args.threads,
        seed=args.seed,
        target=args.mode,
        index=args.index,
    )
    if args.target == "embedded":
        with bench_embedded.embedded_target(scenario) as client:
            samples = bench_runner.run_scenario(scenario, client)
    else:
        client = bench_runner.TargetClient(args.target, username=args.user,
                                           password=args.password)
        samples = bench_runner.run_scenario(scenario, client)
    samples.save(args.out)
    print(f"wrote {args.out}: {scenario.doc_count} docs, "
          f"{scenario.query_count} queries x {len(bench_report.QUERY_TYPES)} types "
          f"({scenario.target} mode)")
    return 0


def cmd_bench_compare(args) -> int:
    direct = bench_report.SampleSet.load(args.direct)
    gated = bench_report.SampleSet.load(args.gated)
    report = bench_report.summarize(direct, gated)
    bench_report.validate_report(report)
    print(bench_report.render_text(report))
    if args.out:
        bench_report.save_report(report, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_ship(args) -> int:
    password = args.password
    if password is None and args.user is not None:
        password = os.environ.get("SEARCHGATE_PASSWORD")
    stats = ship(ShipConfig(
        source=args.source,
        target_url=args.target,
        index=args.index,
        batch_size=args.batch,
        tls_ca=args.tls_ca,
        verify_hostname=not args.no_verify_hostname,
        username=args.user,
        password=password,
    ))
    print(f"sent={stats.sent} failed={stats.failed} batches={stats.batches} "
          f"retries={stats.retries}")
    return 0 if stats.failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="searchgate")
    parser.add_argument("--log-level", default="WARNING")
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run the gateway")
    serve.add_argument("--config", required=True)
    serve.add_argument("--listen")
    serve.add_argument("--backend", help="'embedded' or a backend base URL")
    serve.add_argument("--tls-cert")
    serve.add_argument("--tls-key")
    serve.set_defaults(func=cmd_serve)

    store = commands.add_parser("store", help="run the bare backend")
    store.add_argument("--listen", default="127.0.0.1:9200")
    store.add_argument("--oplog")
    store.set_defaults(func=cmd_store)

    bench = commands.add_parser("bench", help="benchmark harness")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    run = bench_sub.add_parser("run", help="run one scenario")
    run.add_argument("--target", default="embedded",
                     help="'embedded' or a target base URL")
    run.add_argument("--mode", choices=["direct", "gateway"], default="direct")
    run.add_argument("--docs", type=int, default=bench_runner.DEFAULT_DOC_COUNT)
    run.add_argument("--bulk-size", type=int, default=bench_runner.DEFAULT_BULK_SIZE)
    run.add_argument("--queries", type=int, default=bench_runner.DEFAULT_QUERY_COUNT)
    run.add_argument("--threads", type=int, default=bench_runner.DEFAULT_CLIENT_THREADS)
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--index", default="geonames")
    run.add_argument("--user")
    run.add_argument("--password")
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_bench_run)

    compare = bench_sub.add_parser("compare", help="direct vs gated report")
    compare.add_argument("direct")
    compare.add_argument("gated")
    compare.add_argument("--out")
    compare.set_defaults(func=cmd_bench_compare)

    shipcmd = commands.add_parser("ship", help="bulk-load records through the gateway")
    shipcmd.add_argument("--source", required=True, help="file path or - for stdin")
    shipcmd.add_argument("--target", required=True)
    shipcmd.add_argument("--index", required=True)
    shipcmd.add_argument("--batch", type=int, default=500)
    shipcmd.add_argument("--tls-ca")
    shipcmd.add_argument("--no-verify-hostname", action="store_true")
    shipcmd.add_argument("--user")
    shipcmd.add_argument("--password")
    shipcmd.set_defaults(func=cmd_ship)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
