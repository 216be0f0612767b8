"""Command-line entry points.

Verbs: fit, eval, subset-search, cross-validate, bus, coordinator, agent,
run-experiment.  Exit codes: 0 success, 2 schema/scenario errors, 1 other
failures.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
import time
from pathlib import Path

import numpy as np

from . import power_model as pm
from .bus import BusClient, BusServer, MessageBus
from .experiment import (
    ScenarioError,
    load_scenario,
    paper_shape_scenario,
    run_experiment,
    validate_scenario,
)
from .profiles import LocationFix
from .simclock import TimerThread, WallClock

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_SCHEMA = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="override the random seed")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with default option values for this verb")
    parser.add_argument("--virtual-clock", action="store_true",
                        help="deterministic simulated time (run-experiment always uses it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drsim",
                                     description="Demand-response testbed commands")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("fit", help="fit a power model from a metrics log")
    p.add_argument("log", type=Path)
    p.add_argument("--os", required=True, choices=["windows", "ubuntu"])
    p.add_argument("--mode", required=True, choices=["normal", "save"])
    p.add_argument("--out", type=Path, required=True, help="model artifact path")
    p.add_argument("--split", type=float, default=0.8, help="training fraction")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a model artifact on a metrics log")
    p.add_argument("log", type=Path)
    p.add_argument("--model", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("subset-search", help="exhaustive best-subset search")
    p.add_argument("log", type=Path)
    p.add_argument("--os", required=True, choices=["windows", "ubuntu"])
    p.add_argument("--mode", default="normal", choices=["normal", "save"])
    p.add_argument("--max-size", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("cross-validate", help="k-fold cross-validation MSE")
    p.add_argument("log", type=Path)
    p.add_argument("--os", required=True, choices=["windows", "ubuntu"])
    p.add_argument("--mode", default="normal", choices=["normal", "save"])
    p.add_argument("--k", type=int, default=5)
    _add_common(p)

    p = sub.add_parser("bus", help="run the persistent pub/sub bus")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8790)
    p.add_argument("--log-file", type=Path, required=True)
    p.add_argument("--fsync", action="store_true",
                   help="fsync every append (survives machine crash)")
    _add_common(p)

    p = sub.add_parser("coordinator", help="run the coordinator HTTP/WS service")
    p.add_argument("--bus-host", default="127.0.0.1")
    p.add_argument("--bus-port", type=int, default=8790)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--radius-m", type=float, default=1000.0)
    p.add_argument("--ui", type=Path, default=None,
                   help="directory of admin UI static files to serve at /")
    _add_common(p)

    p = sub.add_parser("agent", help="run one demand-side agent")
    p.add_argument("--bus-host", default="127.0.0.1")
    p.add_argument("--bus-port", type=int, default=8790)
    p.add_argument("--agent-id", required=True)
    p.add_argument("--os", required=True, choices=["windows", "ubuntu"])
    p.add_argument("--lat", type=float, default=48.2650)
    p.add_argument("--lon", type=float, default=11.6710)
    p.add_argument("--zip", default="85748")
    p.add_argument("--model-normal", type=Path, default=None)
    p.add_argument("--model-save", type=Path, default=None)
    p.add_argument("--opt-out", action="store_true")
    _add_common(p)

    p = sub.add_parser("run-experiment", help="run a scenario end to end")
    p.add_argument("scenario", type=Path, nargs="?", default=None,
                   help="scenario JSON (omit with --paper-shape)")
    p.add_argument("--paper-shape", action="store_true",
                   help="use the built-in three-laptop, five-event scenario")
    p.add_argument("--out", type=Path, required=True, help="report output directory")
    _add_common(p)

    return parser


def _apply_config(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill unset options from the --config JSON (explicit flags win)."""
    if not getattr(args, "config", None):
        return
    with open(args.config, "r", encoding="utf-8") as f:
        config = json.load(f)
    section = config.get(args.verb, config)
    for key, value in section.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) == parser_defaults.get(attr):
            setattr(args, attr, value)


def _ingest(log_path: Path, spec, require_power: bool):
    with open(log_path, "rb") as f:
        return pm.ingest_metrics_log(f, spec, require_power=require_power)


def _print_report(os_name: str, mode: str, report: pm.EvalReport) -> None:
    print(f"{'OS':<9}{'Mode':<8}{'Adj R2':<9}{'MAPE(%)':<9}"
          f"{'Min/Max ACC(%)':<16}{'Correlation ACC':<17}{'n_test'}")
    print(f"{os_name:<9}{mode:<8}{report.adj_r2:<9.4f}{report.mape * 100:<9.2f}"
          f"{report.minmax_acc * 100:<16.2f}{report.corr_acc:<17.4f}{report.n_test}")


def cmd_fit(args) -> int:
    spec = pm.builtin_spec(args.os, args.mode)
    seed = args.seed if args.seed is not None else 1
    result = _ingest(args.log, spec, require_power=True)
    samples = pm.filter_outliers(result.samples)
    print(f"ingested {len(result.samples)} samples ({result.skipped} skipped), "
          f"{len(samples)} after outlier removal")
    train, test = pm.train_test_split(samples, args.split, seed=seed)
    model = pm.fit(train, spec, seed=seed)
    report = pm.evaluate(model, test)
    pm.save_model(model, args.out)
    print(f"model written to {args.out}")
    _print_report(args.os, args.mode, report)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = pm.load_model(args.model)
    result = _ingest(args.log, model.spec, require_power=True)
    samples = pm.filter_outliers(result.samples)
    report = pm.evaluate(model, samples)
    _print_report(model.spec.os, model.spec.mode, report)
    return EXIT_OK


def cmd_subset_search(args) -> int:
    spec = pm.builtin_spec(args.os, args.mode)
    result = _ingest(args.log, spec, require_power=True)
    samples = pm.filter_outliers(result.samples)
    candidates = spec.terms
    max_size = args.max_size or len(candidates)
    results = pm.best_subset_search(samples, candidates, max_size)
    print(f"top {pm.SUBSET_TOP_K} per subset size:")
    print(f"{'size':<6}{'adj R2':<10}{'BIC':<14}terms")
    for row in results:
        print(f"{row.size:<6}{row.adj_r2:<10.4f}{row.bic:<14.1f}{' + '.join(row.labels)}")
    print("top 5 overall by adjusted R2:")
    for row in pm.rank_by_adj_r2(results)[:5]:
        print(f"  {row.adj_r2:.4f}  size {row.size}  {' + '.join(row.labels)}")
    print("top 5 overall by BIC:")
    for row in pm.rank_by_bic(results)[:5]:
        print(f"  {row.bic:.1f}  size {row.size}  {' + '.join(row.labels)}")
    best = pm.rank_by_bic(results)[0]
    print(f"best by BIC: size {best.size}: {' + '.join(best.labels)} "
          f"(BIC {best.bic:.1f}, adj R2 {best.adj_r2:.4f})")
    return EXIT_OK


def cmd_cross_validate(args) -> int:
    spec = pm.builtin_spec(args.os, args.mode)
    seed = args.seed if args.seed is not None else 1
    result = _ingest(args.log, spec, require_power=True)
    samples = pm.filter_outliers(result.samples)
    errors = pm.cross_validate(samples, spec, k=args.k, seed=seed)
    for i, err in enumerate(errors, start=1):
        print(f"fold {i}: MSE {err:.4f}")
    print(f"mean MSE over {args.k} folds: {float(np.mean(errors)):.4f}")
    return EXIT_OK


def _wait_forever() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    while not stop.is_set():
        time.sleep(0.2)


def cmd_bus(args) -> int:
    bus = MessageBus(log_path=str(args.log_file), fsync=args.fsync)
    server = BusServer(bus, host=args.host, port=args.port)
    print(f"bus listening on {server.host}:{server.port}, log at {args.log_file}",
          flush=True)
    _wait_forever()
    server.close()
    bus.close()
    return EXIT_OK


def cmd_coordinator(args) -> int:
    from .coordinator import Coordinator
    from .server import create_app
    import uvicorn

    client = BusClient(args.bus_host, args.bus_port)
    timers = TimerThread()
    coordinator = Coordinator(client, clock=WallClock(), scheduler=timers,
                              radius_m=args.radius_m)
    coordinator.attach()
    app = create_app(coordinator)
    if args.ui is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(args.ui), html=True), name="ui")
    print(f"coordinator on http://{args.host}:{args.port} "
          f"(bus {args.bus_host}:{args.bus_port})", flush=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    timers.stop()
    client.close()
    return EXIT_OK


def cmd_agent(args) -> int:
    from .agents import AgentDescriptor, SimAgent
    from .power_model import load_model
    from .synthetic import default_true_model, generate_training_log

    seed = args.seed if args.seed is not None else 1
    if args.model_normal and args.model_save:
        model_normal = load_model(args.model_normal)
        model_save = load_model(args.model_save)
    else:
        # Self-fit from synthetic data so a bare agent can run stand-alone.
        print("no model artifacts given; fitting from synthetic data", flush=True)
        truth_n = default_true_model(args.os, "normal", 2.0)
        truth_s = default_true_model(args.os, "save", 1.0)
        model_normal = pm.fit(generate_training_log(truth_n, 2000, seed), truth_n.spec)
        model_save = pm.fit(generate_training_log(truth_s, 2000, seed), truth_s.spec)

    client = BusClient(args.bus_host, args.bus_port)
    clock = WallClock()
    timers = TimerThread(clock)
    descriptor = AgentDescriptor(
        agent_id=args.agent_id,
        os=args.os,
        home_fix=LocationFix(clock.now_ms(), args.lat, args.lon, 10.0, args.zip),
        opt_out=args.opt_out,
    )
    agent = SimAgent(descriptor, model_normal, model_save, client, clock, timers,
                     seed=seed)
    agent.register()
    agent.start_loops()
    print(f"agent {args.agent_id} ({args.os}) running against "
          f"{args.bus_host}:{args.bus_port}", flush=True)
    _wait_forever()
    agent.stop()
    timers.stop()
    client.close()
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    if args.paper_shape:
        scenario = paper_shape_scenario(args.seed if args.seed is not None else 42)
    elif args.scenario is not None:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario["seed"] = args.seed
    else:
        print("error: provide a scenario path or --paper-shape", file=sys.stderr)
        return EXIT_SCHEMA
    report = run_experiment(scenario, args.out)
    print(f"{'event':<7}{'state':<11}{'est (W)':<10}{'measured (W)':<14}"
          f"{'sched (ms)':<12}{'join (ms)'}")
    for row in report["events"]:
        print(f"{row['index']:<7}{row['state']:<11}"
              f"{row['estimated_reduction_w']:<10}{row['measured_reduction_w']:<14}"
              f"{row['scheduling_latency_ms'] if row['scheduling_latency_ms'] is not None else '-':<12}"
              f"{row['join_latency_ms'] if row['join_latency_ms'] is not None else '-'}")
    avg = report["averages"]
    print(f"{'avg':<7}{'':<11}{avg['estimated_reduction_w']:<10}"
          f"{avg['measured_reduction_w']:<14}{avg['scheduling_latency_ms']:<12}"
          f"{avg['join_latency_ms']}")
    print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "eval": cmd_eval,
    "subset-search": cmd_subset_search,
    "cross-validate": cmd_cross_validate,
    "bus": cmd_bus,
    "coordinator": cmd_coordinator,
    "agent": cmd_agent,
    "run-experiment": cmd_run_experiment,
}


def _verb_defaults(parser: argparse.ArgumentParser, verb: str) -> dict:
    sub = next(a for a in parser._actions
               if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a.default for a in sub.choices[verb]._actions}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = _verb_defaults(parser, args.verb)
    try:
        _apply_config(args, defaults)
        return COMMANDS[args.verb](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (pm.SchemaError, pm.EmptyDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
