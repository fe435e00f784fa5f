"""Versioned, deterministic report documents and plot-data export.

Reports are JSON with a fixed key order and fixed decimal places chosen by
the unit suffix of each key (``_j`` and ``_mw`` get 3 decimals), so the same
result always serialises to the same bytes.  See ``docs/report-schema.md``.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Any

from .counters import serialize_power_csv
from .errors import ParseError, ReportIOError
from .orchestrator import BaselineResult, ExperimentPlan, ExperimentResult, RunBoundary
from .stats import SIDEDNESS_NOTE, ComparisonReport, OverheadReport
from .trace import EnergyEstimate, PowerSample, PowerTrace, SummaryStats, TraceDiagnostics

SCHEMA_VERSION = 1
IDLE_NOTE = "idle baseline subtracted at its mean power, not its median"

# decimals per key suffix; integer-valued suffixes render without a point
UNIT_DECIMALS = {
    "_j": 3,
    "_mw": 3,
    "_s": 6,
    "_ms": 3,
    "_us": 3,
    "_hz": 6,
    "_ratio": 6,
    "_pct": 4,
    "_count": 0,
    "_index": 0,
    "_version": 0,
}
SAMPLES_KEY = "samples_us_mw"


class _Raw(str):
    """Pre-rendered JSON fragment."""


def _unit_of(key: str) -> str | None:
    for suffix in sorted(UNIT_DECIMALS, key=len, reverse=True):
        if key.endswith(suffix):
            return suffix
    return None


def _fixed(value: float, decimals: int) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return "null"
    if decimals == 0:
        return str(int(round(value)))
    text = f"{value:.{decimals}f}"
    if float(text) == 0.0:
        text = text.lstrip("-")
    return text


def _timestamp(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else _fixed(value, 3)


def _samples_fragment(trace: PowerTrace) -> _Raw:
    rows = [f"[{_timestamp(s.timestamp)}, {_fixed(s.power, 3)}]" for s in trace.samples]
    return _Raw("[" + ", ".join(rows) + "]")


def _dump(value: Any, key: str = "", indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, _Raw):
        return str(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        parts = [f'{pad}  {json.dumps(k)}: {_dump(v, k, indent + 1)}' for k, v in value.items()]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        parts = [f"{pad}  {_dump(v, key, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(parts) + "\n" + pad + "]"
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return json.dumps(value)
    unit = _unit_of(key)
    if unit is None:
        raise ValueError(f"numeric report field {key!r} lacks a unit suffix")
    return _fixed(value, UNIT_DECIMALS[unit])


def render(document: dict) -> bytes:
    return (_dump(document) + "\n").encode("utf-8")


# --- builders -------------------------------------------------------------


def _energy(e: EnergyEstimate) -> dict:
    return {"energy_j": e.joules, "duration_s": e.duration, "method": e.method.value, "clamped": e.clamped}


def _stats(s: SummaryStats) -> dict:
    return {"mean_mw": s.mean, "median_mw": s.median, "std_dev_mw": s.std_dev, "sample_count": s.count}


def _diagnostics(d: TraceDiagnostics) -> dict:
    return {
        "expected_sample_count": d.expected_samples,
        "actual_sample_count": d.actual_samples,
        "loss_ratio": d.loss_ratio,
        "mean_interval_us": d.mean_interval,
        "max_gap_us": d.max_gap,
    }


def _trace(t: PowerTrace) -> dict:
    return {"source": t.source_label, "nominal_rate_hz": t.nominal_rate, SAMPLES_KEY: _samples_fragment(t)}


def _plan(p: ExperimentPlan) -> dict:
    return {
        "sampling_rate_hz": p.sampling_rate,
        "baseline_sample_count": p.baseline_samples,
        "run_count": p.runs,
        "warmup_discard_count": p.warmup_discard,
        "cooldown_ms": p.cooldown,
        "backend": p.backend,
        "idle_backend": p.idle_backend,
        "replay_speed_ratio": p.replay_speed,
        "component_hint": p.component_hint,
        "workload": list(p.workload),
    }


def _comparison(c: ComparisonReport) -> dict:
    # U can be a half-integer and p spans hundreds of decades: both pre-rendered
    return {
        "u_statistic_count": _Raw(_fixed(c.u_statistic, 1)),
        "p_value_ratio": _Raw(f"{c.p_value:.6e}"),
        "p_method": c.p_method,
        "p_underflow": c.p_underflow,
        "sidedness": "two-sided",
        "cliffs_delta_ratio": c.cliffs_delta,
        "magnitude": c.magnitude,
        "n_a_count": c.n_a,
        "n_b_count": c.n_b,
    }


def experiment_document(result: ExperimentResult) -> dict:
    b = result.baseline
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "experiment",
        "plan": _plan(result.plan),
        "environment": dict(result.plan.env),
        "baseline": _stats(b.stats)
        | {"requested_sample_count": b.requested, "short": b.short, "wall_duration_s": b.wall_duration},
        "energy": {
            "total": _energy(result.total_energy),
            "net": _energy(result.net_energy_value),
            "measured_net": _energy(result.measured_net),
            "per_run": _energy(result.per_run),
        },
        "wall_duration_s": result.wall_duration,
        "workload_window": {"start_us": result.workload_start, "end_us": result.workload_end},
        "warmup_mode": result.warmup_mode,
        "run_boundaries": None if result.run_boundaries is None else [
            {"run_index": rb.index, "start_us": rb.start, "end_us": rb.end} for rb in result.run_boundaries
        ],
        "workload_cpu_time_s": result.workload_cpu_time,
        "diagnostics": _diagnostics(result.diagnostics),
        "warnings": list(result.warnings),
        "notes": [IDLE_NOTE],
        "traces": {"baseline": _trace(b.trace), "workload": _trace(result.workload_trace)},
    }


def baseline_document(result: BaselineResult, plan: ExperimentPlan | None = None) -> dict:
    doc: dict = {"schema_version": SCHEMA_VERSION, "kind": "baseline"}
    if plan is not None:
        doc["plan"] = _plan(plan)
        doc["environment"] = dict(plan.env)
    doc["baseline"] = _stats(result.stats) | {"requested_sample_count": result.requested, "short": result.short}
    doc["wall_duration_s"] = result.wall_duration
    doc["diagnostics"] = _diagnostics(_baseline_diagnostics(result))
    doc["traces"] = {"baseline": _trace(result.trace)}
    return doc


def _baseline_diagnostics(result: BaselineResult) -> TraceDiagnostics:
    from .trace import trace_diagnostics

    t = result.trace
    wall = result.wall_duration or max(t.span / 1e6, 1.0 / t.nominal_rate)
    return trace_diagnostics(t, wall)


def overhead_document(report: OverheadReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "overhead",
        "low_rate_hz": report.low_rate,
        "high_rate_hz": report.high_rate,
        "low_net_energy_j": report.low_net_joules,
        "high_net_energy_j": report.high_net_joules,
        "relative_difference_pct": report.percent,
        "comparison": _comparison(report.comparison),
        "low_diagnostics": _diagnostics(report.low_diagnostics),
        "high_diagnostics": _diagnostics(report.high_diagnostics),
        "notes": [SIDEDNESS_NOTE],
    }


def emit_report(result, format: str = "report") -> bytes:
    """Serialise a result as a ``report`` document or as ``plotdata`` CSV."""
    if format == "plotdata":
        if isinstance(result, ExperimentResult):
            return serialize_power_csv(result.workload_trace)
        if isinstance(result, BaselineResult):
            return serialize_power_csv(result.trace)
        if isinstance(result, PowerTrace):
            return serialize_power_csv(result)
        raise TypeError(f"no plot data for {type(result).__name__}")
    if format != "report":
        raise ValueError(f"unknown report format {format!r}")
    if isinstance(result, ExperimentResult):
        return render(experiment_document(result))
    if isinstance(result, BaselineResult):
        return render(baseline_document(result))
    if isinstance(result, OverheadReport):
        return render(overhead_document(result))
    if isinstance(result, dict):
        return render(result)
    raise TypeError(f"cannot report {type(result).__name__}")


def write_output(data: bytes, path: str | os.PathLike | None) -> None:
    if path is None or str(path) == "-":
        import sys

        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise ReportIOError(str(path), exc.strerror or str(exc)) from exc


# --- parsing ----------------------------------------------------------------


def _parse_energy(d: dict) -> EnergyEstimate:
    return EnergyEstimate(d["energy_j"], d["duration_s"], d["method"], d["clamped"])


def _parse_stats(d: dict) -> SummaryStats:
    return SummaryStats(d["mean_mw"], d["median_mw"], d["std_dev_mw"], d["sample_count"])


def _parse_diagnostics(d: dict) -> TraceDiagnostics:
    return TraceDiagnostics(
        d["expected_sample_count"], d["actual_sample_count"], d["loss_ratio"], d["mean_interval_us"], d["max_gap_us"]
    )


def _parse_trace(d: dict) -> PowerTrace:
    samples = tuple(PowerSample(t, p) for t, p in d[SAMPLES_KEY])
    return PowerTrace(samples, d["nominal_rate_hz"], d["source"])


def _parse_plan(d: dict, env: dict) -> ExperimentPlan:
    return ExperimentPlan(
        sampling_rate=d["sampling_rate_hz"],
        baseline_samples=d["baseline_sample_count"],
        runs=d["run_count"],
        warmup_discard=d["warmup_discard_count"],
        cooldown=d["cooldown_ms"],
        backend=d["backend"],
        workload=tuple(d["workload"]),
        idle_backend=d["idle_backend"],
        replay_speed=d["replay_speed_ratio"],
        component_hint=d["component_hint"],
        env=env,
    )


def load_document(data: bytes | str) -> dict:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"report is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ParseError("report lacks schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ParseError(f"unsupported report schema_version {doc['schema_version']}")
    return doc


def parse_report(data: bytes | str):
    """Inverse of :func:`emit_report` for experiment and baseline reports."""
    doc = load_document(data)
    try:
        if doc["kind"] == "experiment":
            plan = _parse_plan(doc["plan"], doc["environment"])
            traces = doc["traces"]
            b = doc["baseline"]
            baseline = BaselineResult(
                _parse_stats(b), _parse_trace(traces["baseline"]), b["requested_sample_count"], b["wall_duration_s"]
            )
            e = doc["energy"]
            rbs = doc["run_boundaries"]
            return ExperimentResult(
                plan=plan,
                baseline=baseline,
                workload_trace=_parse_trace(traces["workload"]),
                wall_duration=doc["wall_duration_s"],
                total_energy=_parse_energy(e["total"]),
                net_energy_value=_parse_energy(e["net"]),
                measured_net=_parse_energy(e["measured_net"]),
                per_run=_parse_energy(e["per_run"]),
                diagnostics=_parse_diagnostics(doc["diagnostics"]),
                workload_start=doc["workload_window"]["start_us"],
                workload_end=doc["workload_window"]["end_us"],
                run_boundaries=None if rbs is None else tuple(
                    RunBoundary(r["run_index"], r["start_us"], r["end_us"]) for r in rbs
                ),
                warmup_mode=doc["warmup_mode"],
                workload_cpu_time=doc["workload_cpu_time_s"],
                warnings=tuple(doc["warnings"]),
            )
        if doc["kind"] == "baseline":
            b = doc["baseline"]
            return BaselineResult(
                _parse_stats(b), _parse_trace(doc["traces"]["baseline"]), b["requested_sample_count"],
                doc.get("wall_duration_s"),
            )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"report missing or malformed field: {exc}") from exc
    raise ParseError(f"cannot rebuild a result from a {doc.get('kind')!r} report")


def load_report(path: str | os.PathLike):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ReportIOError(str(path), exc.strerror or str(exc)) from exc
    return parse_report(data)
