"""Command-line front end: single runs, experiment matrices, layout tools,
telemetry serving, and event-log replay."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import scenarios
from .engine import ExperimentConfig, RESULTS_COLUMNS, replay_metrics, run, run_experiment
from .failures import FailureConfig
from .orders import Burst, Hotspot, OneShot, Steady, Wave
from .world import AgvSpec, LayoutError, generate_layout, load_layout, serialize_layout

log = logging.getLogger("warerover")


class SchemaMismatchError(ValueError):
    pass


def emit_report(results_csv: str) -> str:
    """Format a results CSV into the Env x Method comparison table."""
    reader = csv.DictReader(io.StringIO(results_csv))
    if reader.fieldnames is None:
        raise SchemaMismatchError("results CSV is empty (no header)")
    missing = [c for c in RESULTS_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise SchemaMismatchError(f"results CSV is missing column {missing[0]!r}")
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in reader:
        key = (row["env"], f"{row['scheduler'].upper()} + {_planner_label(row['planner'])}")
        groups.setdefault(key, []).append(row)
    lines = [f"{'Env.':<6}{'Method':<12}{'SR (%)':>8}{'CT':>10}{'TP':>8}"]
    for (env, method), rows in groups.items():
        sr = sum(float(r["sr"]) for r in rows) / len(rows)
        ct = sum(float(r["ct_ms"]) for r in rows) / len(rows)
        tp = sum(float(r["tp"]) for r in rows) / len(rows)
        lines.append(f"{env:<6}{method:<12}{sr:>8.1f}{ct:>10.2f}{tp:>8.2f}")
    return "\n".join(lines)


def _planner_label(name: str) -> str:
    return {"astar": "A*", "cbs": "CBS"}.get(name, name)


def _build_pattern(args) -> object:
    n = args.orders
    if args.pattern == "os":
        return OneShot(n)
    if args.pattern == "wave":
        return Wave(waves=args.waves, per_wave=max(1, n // args.waves), interval=args.interval)
    if args.pattern == "hotspot":
        return Hotspot(n=n, zipf_s=args.zipf_s)
    if args.pattern == "burst":
        return Burst(base_rate=args.base_rate, burst_rate=args.burst_rate,
                     burst_start=args.burst_start, burst_len=args.burst_len)
    return Steady(rate=args.rate, horizon=args.pattern_horizon)


def _read_failure_script(path: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("step"):
            continue
        step, agv = line.split(",")
        pairs.append((int(step), int(agv)))
    return tuple(pairs)


def _build_config(args, repeats: int) -> ExperimentConfig:
    pattern = _build_pattern(args)
    if args.layout:
        layout = load_layout(Path(args.layout).read_text())
        scenario_name = "custom"
        if args.failures == "off":
            failure_config = FailureConfig(enabled=False)
        else:
            failure_config = FailureConfig(per_step_probability=args.failure_prob,
                                           down_steps=args.down_steps,
                                           enabled=args.failures == "random")
        config = ExperimentConfig(
            layout=layout, pattern=pattern, scheduler=args.scheduler,
            planner=args.planner, failure_config=failure_config,
            horizon=args.horizon, repeats=repeats, base_seed=args.seed,
            deterministic_ct=args.deterministic_ct, scenario_name=scenario_name,
            debug=args.debug,
        )
    else:
        config = scenarios.scenario_config(
            args.scenario, scheduler=args.scheduler, planner=args.planner,
            pattern=pattern, horizon=args.horizon, repeats=repeats,
            base_seed=args.seed, deterministic_ct=args.deterministic_ct,
        )
        failure_config = config.failure_config
        if args.failures == "random" and not failure_config.enabled:
            failure_config = FailureConfig(per_step_probability=args.failure_prob,
                                           down_steps=args.down_steps, enabled=True)
        elif args.failures == "off" and config.scenario_name == "FT":
            failure_config = FailureConfig(enabled=False)
        config = replace(config, failure_config=failure_config, debug=args.debug)
    if args.failures == "scripted":
        config = replace(
            config,
            failure_script=_read_failure_script(args.failure_script),
            failure_config=FailureConfig(per_step_probability=0.0,
                                         down_steps=args.down_steps, enabled=False),
        )
    return config


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layout", help="layout JSON file (overrides --scenario)")
    p.add_argument("--scenario", choices=scenarios.SCENARIO_NAMES, default="homogeneous")
    p.add_argument("--scheduler", choices=["ta", "rd"], default="ta")
    p.add_argument("--planner", default="astar",
                   help="astar | cbs | external:<name> (registered plug-in)")
    p.add_argument("--pattern", choices=["os", "wave", "hotspot", "burst", "steady"],
                   default="os")
    p.add_argument("--orders", type=int, default=scenarios.DEFAULT_ORDERS)
    p.add_argument("--waves", type=int, default=3)
    p.add_argument("--interval", type=int, default=50)
    p.add_argument("--zipf-s", type=float, default=1.0)
    p.add_argument("--base-rate", type=float, default=0.1)
    p.add_argument("--burst-rate", type=float, default=1.0)
    p.add_argument("--burst-start", type=int, default=50)
    p.add_argument("--burst-len", type=int, default=30)
    p.add_argument("--rate", type=float, default=0.15)
    p.add_argument("--pattern-horizon", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=scenarios.DEFAULT_HORIZON)
    p.add_argument("--deterministic-ct", action="store_true",
                   help="report planner node expansions instead of wall-clock ms")
    p.add_argument("--failures", choices=["off", "random", "scripted"], default=None)
    p.add_argument("--failure-prob", type=float, default=0.01)
    p.add_argument("--down-steps", type=int, default=40)
    p.add_argument("--failure-script", help="CSV of step,agv_id pairs (scripted mode)")
    p.add_argument("--debug", action="store_true", help="assert invariants every step")


def _validate_planner(value: str, parser: argparse.ArgumentParser) -> None:
    if value not in ("astar", "cbs") and not value.startswith("external:"):
        parser.error(f"argument --planner: invalid value: {value!r} "
                     "(choose astar, cbs, or external:<name>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warerover",
        description="Warehouse fulfillment simulator coupling order scheduling "
                    "with multi-agent pathfinding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single seeded run")
    _add_run_options(p_run)
    p_run.add_argument("--out", help="write a one-row results CSV here")
    p_run.add_argument("--out-events", help="write the event log here")
    p_run.add_argument("--out-orders", help="write the order trace CSV here")

    p_exp = sub.add_parser("experiment", help="repeated seeded runs + report")
    _add_run_options(p_exp)
    p_exp.add_argument("--repeats", type=int, default=100)
    p_exp.add_argument("--workers", type=int, default=0)
    p_exp.add_argument("--out", help="write the per-run results CSV here")
    p_exp.add_argument("--report-from", help="skip running; format an existing results CSV")

    p_gen = sub.add_parser("gen-layout", help="generate a block layout")
    p_gen.add_argument("--width", type=int, required=True)
    p_gen.add_argument("--height", type=int, required=True)
    p_gen.add_argument("--shelves", type=int, required=True)
    p_gen.add_argument("--stations", type=int, required=True)
    p_gen.add_argument("--agvs", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", help="output path (stdout when omitted)")

    p_val = sub.add_parser("validate-layout", help="validate a layout JSON file")
    p_val.add_argument("--layout", required=True)

    p_srv = sub.add_parser("serve", help="run with live telemetry")
    _add_run_options(p_srv)
    p_srv.add_argument("--serve-port", type=int, default=8571)
    p_srv.add_argument("--speed", type=float, default=5.0, help="steps per wall-second")

    p_rep = sub.add_parser("replay", help="recompute metrics from an event log")
    p_rep.add_argument("--log", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("WAREROVER_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "planner", None) is not None:
        _validate_planner(args.planner, parser)
    if getattr(args, "failures", None) is None and hasattr(args, "failures"):
        args.failures = "random" if getattr(args, "scenario", "") == "fault" else "off"
    if getattr(args, "failures", "") == "scripted" and not getattr(args, "failure_script", None):
        parser.error("--failures scripted requires --failure-script")
    try:
        return _dispatch(args)
    except (LayoutError, SchemaMismatchError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "run":
        config = _build_config(args, repeats=1)
        result = run(config, args.seed)
        print(",".join(RESULTS_COLUMNS))
        print(result.csv_row(config))
        if args.out:
            Path(args.out).write_text(
                ",".join(RESULTS_COLUMNS) + "\n" + result.csv_row(config) + "\n")
        if args.out_events:
            Path(args.out_events).write_text("\n".join(result.event_log) + "\n")
        if args.out_orders:
            Path(args.out_orders).write_text(result.order_trace)
        return 0

    if args.command == "experiment":
        if args.report_from:
            print(emit_report(Path(args.report_from).read_text()))
            return 0
        config = _build_config(args, repeats=args.repeats)
        outcome = run_experiment(config, workers=args.workers or None)
        csv_text = outcome.to_csv()
        if args.out:
            Path(args.out).write_text(csv_text)
        print(emit_report(csv_text))
        if outcome.errors:
            for seed, err in outcome.errors:
                print(f"run seed={seed} failed: {err}", file=sys.stderr)
            return 1
        return 0

    if args.command == "gen-layout":
        specs = [AgvSpec(id=i) for i in range(args.agvs)]
        layout = generate_layout(args.width, args.height, args.shelves,
                                 args.stations, specs, seed=args.seed)
        text = serialize_layout(layout)
        if args.out:
            Path(args.out).write_text(text)
        else:
            print(text)
        return 0

    if args.command == "validate-layout":
        load_layout(Path(args.layout).read_text())
        print("layout OK")
        return 0

    if args.command == "serve":
        from .engine import Simulation
        from .telemetry import TelemetryServer

        config = _build_config(args, repeats=1)
        sim = Simulation(config, args.seed)
        server = TelemetryServer(sim, port=args.serve_port, speed=args.speed)
        print(f"serving ws://127.0.0.1:{args.serve_port} (ctrl-c to stop)")
        server.serve_forever()
        return 0

    if args.command == "replay":
        lines = Path(args.log).read_text().splitlines()
        recomputed = replay_metrics(lines)
        recorded = recomputed.pop("recorded", {})
        print(f"recomputed: sr={recomputed['sr']} tp={recomputed['tp']} "
              f"makespan={recomputed['makespan']} ct={recomputed['ct']}")
        if recorded:
            match = (
                abs(recorded["sr"] - recomputed["sr"]) < 1e-9
                and abs(recorded["tp"] - recomputed["tp"]) < 1e-9
                and recorded["makespan"] == recomputed["makespan"]
            )
            if recorded.get("ct") is not None:
                match = match and abs(recorded["ct"] - recomputed["ct"]) < 1e-9
            print(f"recorded:   sr={recorded['sr']} tp={recorded['tp']} "
                  f"makespan={recorded['makespan']} ct={recorded.get('ct')}")
            if not match:
                print("MISMATCH between recorded and recomputed metrics", file=sys.stderr)
                return 1
            print("replay matches recorded metrics")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
