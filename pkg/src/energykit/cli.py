"""``energykit`` command line.

Exit status: 0 success, 1 experiment or data failure, 2 usage error.
Workload commands follow a literal ``--``::

    energykit measure --backend replay:paper_fixture --runs 10 -- true
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import Sequence

from . import __version__
from .counters import SamplerLogFormat, load_trace, parse_sampler_log, replay_trace, serialize_power_csv
from .errors import EnergyKitError, ExperimentFailedError
from .models import (
    align_clocks,
    calibrate_costs,
    estimate_from_models,
    flops_proxy,
    format_cost_model,
    load_cost_model,
    load_profile,
    retime_trace,
)
from .orchestrator import ExperimentPlan, TAIL_STATE_FLOORS_MS, load_plan, measure_idle, run_experiment
from .report import baseline_document, emit_report, load_report, render, write_output
from .stats import SampleSizeRequest, overhead_report, required_sample_size
from .trace import PowerTrace


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("experiment options")
    g.add_argument("--plan", help="key = value plan file; flags override its fields")
    g.add_argument("--rate-hz", type=float, dest="sampling_rate")
    g.add_argument("--runs", type=int)
    g.add_argument("--warmup-discard", type=int)
    g.add_argument("--cooldown-ms", type=float, dest="cooldown")
    g.add_argument("--baseline-samples", type=int)
    g.add_argument("--backend", help="powercap[:path] | replay:<file|fixture> | log:<file>:<format>")
    g.add_argument("--idle-backend", help="replay/log source for the idle baseline")
    g.add_argument("--replay-speed", type=float, help="0 replays instantly (deterministic), 1 in real time")
    g.add_argument("--component-hint", choices=sorted(TAIL_STATE_FLOORS_MS))
    g.add_argument("--env-note", action="append", default=[], metavar="TEXT",
                   help="environment disclosure (key=value or free text); repeatable")
    o = p.add_argument_group("output options")
    o.add_argument("--output", "-o", help="output path (default stdout)")
    o.add_argument("--format", choices=("report", "plotdata"), default="report")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="energykit", description="Measure and estimate software energy use.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    sub.add_parser("baseline", parents=[common], help="measure idle power")
    sub.add_parser("measure", parents=[common], help="run a workload under the sampler (command after --)")

    cmp_ = sub.add_parser("compare", parents=[common], help="sampling-overhead comparison of two measure reports")
    cmp_.add_argument("low", help="report at the lower sampling rate (reference)")
    cmp_.add_argument("high", help="report at the higher sampling rate")

    model = sub.add_parser("model", help="analytical estimates")
    msub = model.add_subparsers(dest="model_command", metavar="ACTION")
    msub.required = True
    est = msub.add_parser("estimate", parents=[common], help="operation counts x per-operation costs")
    est.add_argument("--profile", required=True, help="operation_id,count file")
    est.add_argument("--costs", required=True, help="cost model file")
    est.add_argument("--lenient", action="store_true", help="skip operations without a cost instead of failing")
    cal = msub.add_parser("calibrate", parents=[common], help="per-operation costs from microbenchmark traces")
    cal.add_argument("--op", action="append", required=True, metavar="NAME=TRACE:REPS",
                     help="operation name, generic-power-csv trace and repetition count; repeatable")
    cal.add_argument("--platform", default="", help="platform identifier for the cost file")
    fl = msub.add_parser("flops", parents=[common], help="FLOPS x time comparison proxy")
    fl.add_argument("--duration-s", type=float, required=True)
    fl.add_argument("--flops-rate", type=float, required=True, help="operations per second")

    al = sub.add_parser("align", parents=[common], help="fit meter clock to reference clock")
    al.add_argument("--pairs", required=True, help="CSV 'reference_us,meter_us' of matched events")
    al.add_argument("--trace", help="meter-clock generic-power-csv to re-timestamp")

    rp = sub.add_parser("replay", parents=[common], help="replay a trace file or fixture as generic-power-csv")
    rp.add_argument("source", help="generic-power-csv path or fixture name")
    rp.add_argument("--speed", type=float, default=0.0)
    rp.add_argument("--log-format", choices=[f.value for f in SamplerLogFormat],
                    help="parse SOURCE as this sampler log format")

    ss = sub.add_parser("samplesize", parents=[common], help="Cochran sample size")
    ss.add_argument("--confidence", type=float, default=0.95)
    ss.add_argument("--margin", type=float, default=0.05)
    return parser


def _env_from_notes(notes: Sequence[str], base: dict) -> dict:
    env = dict(base)
    for i, note in enumerate(notes, start=1):
        key, sep, value = note.partition("=")
        if sep and key.strip() and " " not in key.strip():
            env[key.strip()] = value.strip()
        else:
            env[f"note{i}"] = note
    return env


def plan_from_args(args: argparse.Namespace, workload: Sequence[str] = ()) -> ExperimentPlan:
    plan = load_plan(args.plan) if args.plan else ExperimentPlan()
    overrides = {}
    for name in ("sampling_rate", "runs", "warmup_discard", "cooldown", "baseline_samples",
                 "backend", "idle_backend", "replay_speed", "component_hint"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if workload:
        overrides["workload"] = tuple(workload)
    overrides["env"] = _env_from_notes(args.env_note, plan.env)
    return dataclasses.replace(plan, **overrides)


def _cmd_baseline(args, workload) -> int:
    plan = plan_from_args(args)
    _require_disclosure(plan)
    result = measure_idle(plan)
    if args.format == "plotdata":
        write_output(emit_report(result, "plotdata"), args.output)
    else:
        write_output(render(baseline_document(result, plan)), args.output)
    return 0


def _require_disclosure(plan: ExperimentPlan) -> None:
    if plan.backend.partition(":")[0] == "powercap" and not plan.env:
        raise UsageError(
            "live measurements need an environment disclosure: pass --env-note "
            "(power source, CPU governor, background load) or set env.* in the plan"
        )


def _cmd_measure(args, workload) -> int:
    plan = plan_from_args(args, workload)
    if not plan.workload:
        raise UsageError("measure needs a workload command after '--' or in the plan file")
    _require_disclosure(plan)
    try:
        result = run_experiment(plan)
    except ExperimentFailedError as exc:
        print(f"energykit: experiment failed: {exc}", file=sys.stderr)
        if exc.trace is not None and args.output and len(exc.trace):
            write_output(serialize_power_csv(exc.trace), args.output + ".partial.csv")
        return 1
    for w in result.warnings:
        print(f"energykit: warning: {w}", file=sys.stderr)
    write_output(emit_report(result, args.format), args.output)
    return 0


def _cmd_compare(args, workload) -> int:
    low, high = load_report(args.low), load_report(args.high)
    write_output(emit_report(overhead_report(low, high)), args.output)
    return 0


def _cmd_model(args, workload) -> int:
    if args.model_command == "estimate":
        profile = load_profile(args.profile)
        costs = load_cost_model(args.costs)
        est = estimate_from_models(profile, costs, strict=not args.lenient)
        doc = {
            "schema_version": 1,
            "kind": "analytical",
            "profile": profile.label,
            "platform": costs.platform,
            "energy_j": est.joules,
            "method": est.estimate.method.value,
            "uncovered_operations": list(est.uncovered),
            "notes": list(profile.notes),
        }
        write_output(render(doc), args.output)
        return 0
    if args.model_command == "calibrate":
        mapping = {}
        for spec in args.op:
            name, sep, rest = spec.partition("=")
            path, sep2, reps = rest.rpartition(":")
            if not (sep and sep2 and name and path):
                raise UsageError(f"--op expects NAME=TRACE:REPS, got {spec!r}")
            try:
                mapping[name] = (load_trace(path), int(reps))
            except ValueError:
                raise UsageError(f"repetition count {reps!r} is not an integer") from None
        model = calibrate_costs(mapping, platform=args.platform)
        write_output(format_cost_model(model).encode("utf-8"), args.output)
        return 0
    est = flops_proxy(args.duration_s, args.flops_rate)
    doc = {
        "schema_version": 1,
        "kind": "flops-proxy",
        "flop_count": est.flop_count,
        "duration_s": est.duration,
        "flops_rate_hz": est.flops_rate,
        "interpretation": "comparison proxy only; not joules",
    }
    write_output(render(doc), args.output)
    return 0


def _read_pairs(path: str) -> tuple[list[float], list[float]]:
    ref, met = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line == "reference_us,meter_us":
                continue
            try:
                a, b = line.split(",")
                ref.append(float(a))
                met.append(float(b))
            except ValueError:
                raise EnergyKitError(f"{path}:{lineno}: expected 'reference_us,meter_us'") from None
    return ref, met


def _cmd_align(args, workload) -> int:
    fit = align_clocks(*_read_pairs(args.pairs))
    doc = {
        "schema_version": 1,
        "kind": "alignment",
        "offset_us": fit.offset,
        "drift_ratio": fit.drift,
        "residual_rms_us": fit.residual_rms,
        "n_points_count": fit.n_points,
    }
    if args.trace:
        trace = parse_sampler_log(args.trace, SamplerLogFormat.GENERIC_POWER_CSV)
        sys.stderr.write(render(doc).decode("utf-8"))
        write_output(serialize_power_csv(retime_trace(trace, fit)), args.output)
    else:
        write_output(render(doc), args.output)
    return 0


def _cmd_replay(args, workload) -> int:
    if args.log_format:
        trace = parse_sampler_log(args.source, args.log_format)
    else:
        trace = load_trace(args.source)
    samples = tuple(replay_trace(trace, args.speed))
    out = PowerTrace(samples, trace.nominal_rate, trace.source_label)
    write_output(serialize_power_csv(out), args.output)
    return 0


def _cmd_samplesize(args, workload) -> int:
    n = required_sample_size(SampleSizeRequest(args.confidence, args.margin))
    write_output(f"{n}\n".encode(), args.output)
    return 0


COMMANDS = {
    "baseline": _cmd_baseline,
    "measure": _cmd_measure,
    "compare": _cmd_compare,
    "model": _cmd_model,
    "align": _cmd_align,
    "replay": _cmd_replay,
    "samplesize": _cmd_samplesize,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    workload: list[str] = []
    if "--" in argv:
        cut = argv.index("--")
        argv, workload = argv[:cut], argv[cut + 1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="energykit: %(levelname)s: %(message)s")
    if workload and args.command != "measure":
        parser.print_usage(sys.stderr)
        print(f"energykit: error: '{args.command}' takes no workload command", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args, workload)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"energykit: error: {exc}", file=sys.stderr)
        return 2
    except EnergyKitError as exc:
        print(f"energykit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
