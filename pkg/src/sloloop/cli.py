"""Operator command line: run scenarios open- or closed-loop, export plot data,
validate descriptors.

Exit codes: 0 clean, 1 input/parse errors, 2 closed-loop run that ended with an
unresolved SLO violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .controller import FeedbackController, KnowledgeBase, trace_to_jsonl
from .descriptor import DescriptorError, load_descriptor, validate_remediation
from .sim import SimError, load_scenario_file
from .telemetry import MetricStore

logger = logging.getLogger("sloloop")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNRESOLVED = 2


def _configure_logging():
    level = os.environ.get("SLOLOOP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_summary(path: Path, store: MetricStore, *, horizon: int, seed,
                   mode: str, violations: int, actions: int) -> None:
    lines = [
        f"mode: {mode}",
        f"horizon_ticks: {horizon}",
        f"seed: {seed}",
        f"violations: {violations}",
        f"actions_taken: {actions}",
        "",
        "per-metric means:",
    ]
    for component, metric in store.pairs():
        ts = store.query_window(component, metric, 0, horizon)
        values = [s.value for s in ts.samples if s.value is not None]
        if values:
            lines.append(f"  {component}/{metric}: {sum(values) / len(values):.6f} "
                         f"({len(values)} samples)")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    try:
        world = load_scenario_file(args.scenario)
    except (OSError, SimError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    descriptor = None
    if args.descriptor:
        try:
            descriptor = load_descriptor(args.descriptor)
        except (OSError, DescriptorError) as exc:
            print(f"descriptor error: {exc}", file=sys.stderr)
            return EXIT_ERROR
    if args.mode == "closed-loop" and descriptor is None:
        print("closed-loop mode requires --descriptor", file=sys.stderr)
        return EXIT_ERROR

    if args.seed is not None:
        world = _reseed(args.scenario, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    horizon = world.horizon
    store = MetricStore(retention_window=horizon + 1)
    world.bind_sink(store.ingest)

    violations = 0
    actions = 0
    exit_code = EXIT_OK
    if args.mode == "open-loop":
        (out / "knowledge.jsonl").write_text("", encoding="utf-8")
        for _ in range(horizon):
            world.step()
    else:
        knowledge = KnowledgeBase(path=out / "knowledge.jsonl")
        (out / "knowledge.jsonl").write_text("", encoding="utf-8")
        controller = FeedbackController(descriptor, store, world.sim_actuator(),
                                        period=args.period, seed=world.seed,
                                        knowledge=knowledge)
        for tick in range(horizon):
            world.step()
            controller.on_tick(tick)
        controller.finish(horizon)
        (out / "loop_trace.jsonl").write_text(trace_to_jsonl(controller.trace),
                                              encoding="utf-8")
        violations = sum(1 for e in controller.trace
                         if e["phase"] == "status" and e["payload"]["verdict"] == "fail")
        actions = sum(1 for e in controller.trace if e["phase"] == "apply")
        if controller.last_status() == "fail":
            exit_code = EXIT_UNRESOLVED

    with open(out / "telemetry.csv", "w", encoding="utf-8") as fh:
        store.export_csv(fh)
    _write_summary(out / "summary.txt", store, horizon=horizon, seed=world.seed,
                   mode=args.mode, violations=violations, actions=actions)
    logger.info("run complete: %s (exit %d)", out, exit_code)
    return exit_code


def _reseed(scenario_path, seed):
    from .sim import load_scenario
    with open(scenario_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["seed"] = seed
    return load_scenario(json.dumps(doc))


def _read_telemetry(run_dir: Path):
    rows = []
    with open(run_dir / "telemetry.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            value = float(row["value"]) if row["value"] else None
            rows.append((row["component"], row["metric"], int(row["timestamp"]), value))
    return rows


def cmd_plotdata(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "telemetry.csv").exists():
        print(f"missing artifacts in {run_dir}", file=sys.stderr)
        return EXIT_ERROR
    rows = _read_telemetry(run_dir)
    writer = csv.writer(sys.stdout, lineterminator="\n")

    if args.figure == "motions_vs_response":
        detectors = {}
        responses = {}
        cameras = []
        for component, metric, tick, value in rows:
            if metric == "detected_motions":
                camera = component[:-9] if component.endswith("-detector") else component
                detectors.setdefault(camera, {})[tick] = value
                if camera not in cameras:
                    cameras.append(camera)
            elif metric == "response_time" and not component.startswith("recognizer"):
                responses.setdefault(component, {})[tick] = value
        writer.writerow(["tick", "camera", "detected_motions", "response_time"])
        for camera in sorted(cameras):
            motions = detectors.get(camera, {})
            response = responses.get(camera, {})
            for tick in sorted(motions):
                rt = response.get(tick)
                writer.writerow([tick, camera, motions[tick],
                                 "" if rt is None else f"{rt:.6f}"])
        return EXIT_OK

    # adaptation_timeline
    processing = {}
    replicas = {}
    for component, metric, tick, value in rows:
        if metric == "frame_processing_time":
            processing[tick] = value
        elif metric == "replicas":
            replicas[tick] = value
    action_marks = {}
    trace_path = run_dir / "loop_trace.jsonl"
    if trace_path.exists():
        with open(trace_path, encoding="utf-8") as fh:
            for line in fh:
                event = json.loads(line)
                if event["phase"] == "apply":
                    action_marks[event["tick"]] = event["payload"]["action"]
    writer.writerow(["tick", "frame_processing_time", "replicas", "action"])
    for tick in sorted(processing):
        writer.writerow([tick, f"{processing[tick]:.6f}",
                         int(replicas.get(tick, 0)), action_marks.get(tick, "")])
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        descriptor = load_descriptor(args.descriptor)
    except (OSError, DescriptorError) as exc:
        print(f"invalid descriptor: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"ok: {len(descriptor.components)} components, {len(descriptor.metrics)} metrics, "
          f"{len(descriptor.slos)} slos, {len(descriptor.actions)} actions")
    for warning in validate_remediation(descriptor):
        print(f"warning: {warning}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sloloop",
                                     description="SLO-aware feedback loop runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario open- or closed-loop")
    run.add_argument("--descriptor", help="descriptor JSON (required for closed-loop)")
    run.add_argument("--scenario", required=True, help="scenario JSON")
    run.add_argument("--mode", choices=["open-loop", "closed-loop"], default="open-loop")
    run.add_argument("--out", required=True, help="output directory for artifacts")
    run.add_argument("--seed", type=int, default=None, help="override scenario seed")
    run.add_argument("--period", type=int, default=5, help="control round period in ticks")
    run.set_defaults(func=cmd_run)

    plot = sub.add_parser("plotdata", help="emit figure-ready CSV from a run directory")
    plot.add_argument("--run", required=True, help="run output directory")
    plot.add_argument("--figure", required=True,
                      choices=["motions_vs_response", "adaptation_timeline"])
    plot.set_defaults(func=cmd_plotdata)

    validate = sub.add_parser("validate", help="parse a descriptor and report warnings")
    validate.add_argument("--descriptor", required=True)
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:  # downstream consumer (head, less) closed the pipe
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
