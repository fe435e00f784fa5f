"""Analytical energy estimates and external-meter clock alignment.

Two-model estimation multiplies an application's operation counts by a
platform's per-operation costs.  Operation identifiers are opaque strings:
an "operation" can be an instruction, a library call or a syscall.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    InsufficientPointsError,
    InvalidArgumentError,
    MissingCostError,
    ParseError,
    SingularFitError,
)
from .trace import EnergyEstimate, EnergyMethod, PowerSample, PowerTrace, integrate_power_trace

PROFILE_HEADER = "operation_id,count"
COST_HEADER = "operation_id,millijoules_per_op"
PLATFORM_PREFIX = "platform,"


@dataclass(frozen=True)
class OperationProfile:
    counts: Mapping[str, float]
    label: str = ""
    notes: tuple[str, ...] = ()  # free-text caveats (path dependence, threading)

    def __post_init__(self):
        object.__setattr__(self, "counts", dict(self.counts))
        for op, n in self.counts.items():
            if not (n >= 0):
                raise InvalidArgumentError(f"count for {op!r} must be >= 0, got {n}")


@dataclass(frozen=True)
class OperationCostModel:
    costs: Mapping[str, float]  # mJ per operation
    platform: str = ""
    calibration_note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "costs", dict(self.costs))
        for op, c in self.costs.items():
            if not (c >= 0):
                raise InvalidArgumentError(f"cost for {op!r} must be >= 0 mJ, got {c}")


@dataclass(frozen=True)
class AnalyticalEstimate:
    estimate: EnergyEstimate
    uncovered: tuple[str, ...] = field(default_factory=tuple)

    @property
    def joules(self) -> float:
        return self.estimate.joules


@dataclass(frozen=True)
class FlopsProxyEstimate:
    """Floating-point operation count for like-for-like comparisons.

    This is *not* an energy in joules; it only ranks workloads run on an
    unchanged hardware and software stack.
    """

    flop_count: float
    duration: float  # s
    flops_rate: float  # operations per second
    kind: str = "comparison-proxy"


@dataclass(frozen=True)
class ClockAlignment:
    offset: float  # us
    drift: float
    residual_rms: float  # us
    n_points: int

    def to_reference(self, meter_time_us):
        """Map meter-clock timestamps onto the reference clock."""
        return (np.asarray(meter_time_us, dtype=float) - self.offset) / self.drift


def estimate_from_models(
    profile: OperationProfile,
    costs: OperationCostModel,
    strict: bool = True,
) -> AnalyticalEstimate:
    """Energy as the dot product of operation counts and per-operation costs.

    In strict mode an operation that occurs but has no cost raises
    :class:`MissingCostError`; otherwise it is skipped and listed in
    ``uncovered``.
    """
    uncovered = []
    terms = []
    for op in sorted(profile.counts):
        n = profile.counts[op]
        if n == 0:
            continue
        if op not in costs.costs:
            if strict:
                raise MissingCostError(op)
            uncovered.append(op)
            continue
        terms.append(n * costs.costs[op])
    joules = math.fsum(terms) * 1e-3
    return AnalyticalEstimate(EnergyEstimate(joules, 0.0, EnergyMethod.ANALYTICAL), tuple(uncovered))


def calibrate_costs(
    per_operation_traces: Mapping[str, tuple[PowerTrace, int]],
    platform: str = "",
) -> OperationCostModel:
    """Per-operation cost from microbenchmark traces: trace energy / repetitions."""
    costs = {}
    sources = []
    for op in sorted(per_operation_traces):
        trace, reps = per_operation_traces[op]
        if reps <= 0:
            raise InvalidArgumentError(f"repetitions for {op!r} must be > 0, got {reps}")
        costs[op] = integrate_power_trace(trace).joules / reps * 1e3
        sources.append(f"{op}={trace.source_label}x{reps}")
    return OperationCostModel(costs, platform, "calibrated from " + "; ".join(sources) if sources else "")


def flops_proxy(duration: float, flops_rate: float) -> FlopsProxyEstimate:
    if not (flops_rate > 0):
        raise InvalidArgumentError(f"flops_rate must be > 0, got {flops_rate}")
    if not (duration >= 0):
        raise InvalidArgumentError(f"duration must be >= 0 s, got {duration}")
    return FlopsProxyEstimate(duration * flops_rate, duration, flops_rate)


def align_clocks(reference_events: Sequence[float], meter_events: Sequence[float]) -> ClockAlignment:
    """Ordinary least-squares fit of ``meter = drift * reference + offset``.

    No outlier rejection; inspect ``residual_rms`` before trusting the fit.
    """
    ref = np.asarray(reference_events, dtype=float)
    met = np.asarray(meter_events, dtype=float)
    if ref.shape != met.shape:
        raise InvalidArgumentError(f"event sequences differ in length: {ref.size} vs {met.size}")
    if ref.size < 2:
        raise InsufficientPointsError(f"need at least 2 matched events, got {ref.size}")
    ref_mean = ref.mean()
    dx = ref - ref_mean
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise SingularFitError("all reference timestamps are equal")
    met_mean = met.mean()
    drift = float(dx @ (met - met_mean)) / sxx
    offset = float(met_mean - drift * ref_mean)
    resid = met - (drift * ref + offset)
    return ClockAlignment(offset, drift, float(np.sqrt(np.mean(resid**2))), int(ref.size))


def retime_trace(trace: PowerTrace, alignment: ClockAlignment) -> PowerTrace:
    """Re-timestamp a meter-clock trace onto the reference clock.

    Samples that would land before reference time 0 are dropped.
    """
    new_ts = alignment.to_reference(trace.timestamps)
    samples = tuple(PowerSample(float(t), s.power) for t, s in zip(new_ts, trace.samples) if t >= 0)
    return PowerTrace(samples, trace.nominal_rate * alignment.drift, f"{trace.source_label}@aligned")


# --- file formats -----------------------------------------------------------


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield lineno, line


def parse_profile(text: str, label: str = "") -> OperationProfile:
    """Parse ``operation_id,count`` records; ``#`` lines become profile notes."""
    counts: dict[str, float] = {}
    notes = []
    for lineno, line in _data_lines(text):
        if line.startswith("#"):
            notes.append(line.lstrip("# "))
            continue
        if line == PROFILE_HEADER:
            continue
        op, sep, value = line.rpartition(",")
        if not sep or not op:
            raise ParseError(f"expected 'operation_id,count', got {line!r}", lineno)
        try:
            n = float(value)
        except ValueError:
            raise ParseError(f"count {value!r} is not a number", lineno) from None
        if n < 0:
            raise ParseError(f"negative count for {op!r}", lineno)
        if op in counts:
            raise ParseError(f"duplicate operation {op!r}", lineno)
        counts[op] = int(n) if n.is_integer() else n
    return OperationProfile(counts, label, tuple(notes))


def parse_cost_model(text: str) -> OperationCostModel:
    """Parse a cost file: ``platform,<id>`` first, then ``operation_id,millijoules_per_op``."""
    lines = list(_data_lines(text))
    if not lines or not lines[0][1].startswith(PLATFORM_PREFIX):
        raise ParseError("first line must be 'platform,<id>'", lines[0][0] if lines else 1)
    platform = lines[0][1][len(PLATFORM_PREFIX):]
    costs: dict[str, float] = {}
    notes = []
    for lineno, line in lines[1:]:
        if line.startswith("#"):
            notes.append(line.lstrip("# "))
            continue
        if line == COST_HEADER:
            continue
        op, sep, value = line.rpartition(",")
        if not sep or not op:
            raise ParseError(f"expected 'operation_id,millijoules_per_op', got {line!r}", lineno)
        try:
            c = float(value)
        except ValueError:
            raise ParseError(f"cost {value!r} is not a number", lineno) from None
        if c < 0:
            raise ParseError(f"negative cost for {op!r}", lineno)
        costs[op] = c
    return OperationCostModel(costs, platform, " ".join(notes))


def format_cost_model(model: OperationCostModel) -> str:
    lines = [PLATFORM_PREFIX + model.platform]
    if model.calibration_note:
        lines.append("# " + model.calibration_note)
    lines.append(COST_HEADER)
    lines.extend(f"{op},{model.costs[op]!r}" for op in sorted(model.costs))
    return "\n".join(lines) + "\n"


def format_profile(profile: OperationProfile) -> str:
    lines = ["# " + n for n in profile.notes]
    lines.append(PROFILE_HEADER)
    lines.extend(f"{op},{profile.counts[op]}" for op in sorted(profile.counts))
    return "\n".join(lines) + "\n"


def load_profile(path: str | os.PathLike) -> OperationProfile:
    path = Path(path)
    return parse_profile(path.read_text(encoding="utf-8"), label=path.stem)


def load_cost_model(path: str | os.PathLike) -> OperationCostModel:
    return parse_cost_model(Path(path).read_text(encoding="utf-8"))
