"""Power traces and the arithmetic turning them into energy figures.

Internal units are milliwatts and microseconds; joules and seconds only
appear on :class:`EnergyEstimate`.  Integration is zero-order hold: every
sample's power is held until the next timestamp, and the final sample is
held for the mean inter-sample interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import EmptyTraceError, InvalidArgumentError, MalformedTraceError

# mW * us -> J
MW_US_TO_J = 1e-9
US_PER_S = 1_000_000


class EnergyMethod(str, Enum):
    TRACE_INTEGRATION = "trace-integration"
    NET_OF_IDLE = "net-of-idle"
    PER_RUN = "per-run"
    ANALYTICAL = "analytical"
    FLOPS_PROXY = "flops-proxy"


@dataclass(frozen=True)
class PowerSample:
    timestamp: float  # us since trace start
    power: float  # mW

    def __post_init__(self):
        if not (self.power >= 0):
            raise InvalidArgumentError(f"power must be >= 0 mW, got {self.power}")
        if not (self.timestamp >= 0):
            raise InvalidArgumentError(f"timestamp must be >= 0 us, got {self.timestamp}")


@dataclass(frozen=True)
class PowerTrace:
    samples: tuple[PowerSample, ...]
    nominal_rate: float  # Hz
    source_label: str = "unknown"

    def __post_init__(self):
        if not isinstance(self.samples, tuple):
            object.__setattr__(self, "samples", tuple(self.samples))
        if not (self.nominal_rate > 0):
            raise InvalidArgumentError(f"nominal_rate must be > 0 Hz, got {self.nominal_rate}")
        ts = self.timestamps
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise MalformedTraceError(
                f"timestamps not strictly increasing at sample {bad} "
                f"({ts[bad - 1]} -> {ts[bad]} us)"
            )

    @classmethod
    def from_arrays(
        cls,
        timestamps: Iterable[float],
        powers: Iterable[float],
        nominal_rate: float,
        source_label: str = "unknown",
    ) -> "PowerTrace":
        samples = tuple(PowerSample(t, p) for t, p in zip(timestamps, powers, strict=True))
        return cls(samples, nominal_rate, source_label)

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def timestamps(self) -> np.ndarray:
        return np.fromiter((s.timestamp for s in self.samples), dtype=float, count=len(self.samples))

    @cached_property
    def powers(self) -> np.ndarray:
        return np.fromiter((s.power for s in self.samples), dtype=float, count=len(self.samples))

    @property
    def mean_interval(self) -> float:
        """Mean spacing between samples in us (0 for fewer than two samples)."""
        if len(self.samples) < 2:
            return 0.0
        return (self.samples[-1].timestamp - self.samples[0].timestamp) / (len(self.samples) - 1)

    @property
    def span(self) -> float:
        """Integration extent in us: last - first + mean interval."""
        if not self.samples:
            return 0.0
        return self.samples[-1].timestamp - self.samples[0].timestamp + self.mean_interval

    def slice(self, start: int, stop: int | None = None) -> "PowerTrace":
        return PowerTrace(self.samples[start:stop], self.nominal_rate, self.source_label)

    def scaled(self, k: float) -> "PowerTrace":
        return PowerTrace(
            tuple(PowerSample(s.timestamp, s.power * k) for s in self.samples),
            self.nominal_rate,
            self.source_label,
        )

    def shifted(self, offset_us: float) -> "PowerTrace":
        return PowerTrace(
            tuple(PowerSample(s.timestamp + offset_us, s.power) for s in self.samples),
            self.nominal_rate,
            self.source_label,
        )


@dataclass(frozen=True)
class EnergyEstimate:
    joules: float
    duration: float  # s
    method: EnergyMethod
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", EnergyMethod(self.method))
        if self.method is EnergyMethod.TRACE_INTEGRATION and self.joules < 0:
            raise InvalidArgumentError("integrated energy cannot be negative")


@dataclass(frozen=True)
class SummaryStats:
    mean: float  # mW
    median: float
    std_dev: float
    count: int


@dataclass(frozen=True)
class TraceDiagnostics:
    expected_samples: int
    actual_samples: int
    loss_ratio: float
    mean_interval: float  # us
    max_gap: float  # us


def _require_integrable(trace: PowerTrace) -> None:
    if len(trace.samples) < 2:
        raise EmptyTraceError(f"need at least 2 samples to integrate, got {len(trace.samples)}")


def integrate_power_trace(trace: PowerTrace) -> EnergyEstimate:
    """Rectangle-rule energy of ``trace``.

    >>> t = PowerTrace.from_arrays([0, 1_000_000], [1000.0, 1000.0], 1.0)
    >>> integrate_power_trace(t).joules
    2.0
    """
    _require_integrable(trace)
    ts, p = trace.timestamps, trace.powers
    widths = np.empty_like(ts)
    widths[:-1] = np.diff(ts)
    widths[-1] = trace.mean_interval
    joules = math.fsum(p * widths) * MW_US_TO_J
    return EnergyEstimate(joules, trace.span / US_PER_S, EnergyMethod.TRACE_INTEGRATION)


def integrate_window(trace: PowerTrace, start_us: float, end_us: float) -> float:
    """Joules of the zero-order-hold signal restricted to ``[start_us, end_us]``.

    Over ``[first timestamp, first timestamp + span]`` this equals
    :func:`integrate_power_trace`.  Before the first sample the signal is 0.
    """
    _require_integrable(trace)
    if end_us < start_us:
        raise InvalidArgumentError("window end precedes start")
    ts = trace.timestamps
    lo = ts
    hi = np.empty_like(ts)
    hi[:-1] = ts[1:]
    hi[-1] = ts[-1] + trace.mean_interval
    overlap = np.clip(np.minimum(hi, end_us) - np.maximum(lo, start_us), 0.0, None)
    return math.fsum(trace.powers * overlap) * MW_US_TO_J


def summarize_trace(trace: PowerTrace) -> SummaryStats:
    if not trace.samples:
        raise EmptyTraceError("cannot summarize an empty trace")
    p = trace.powers
    std = float(np.std(p, ddof=1)) if p.size > 1 else 0.0
    return SummaryStats(float(np.mean(p)), float(np.median(p)), std, int(p.size))


def net_energy(total: EnergyEstimate, idle_power: float, duration: float) -> EnergyEstimate:
    """Subtract ``idle_power`` (mW) held for ``duration`` (s) from ``total``.

    A negative difference is clamped to 0 J and flagged: idle draw is noisy
    enough that a short or light workload can land below it.
    """
    if not (duration > 0):
        raise InvalidArgumentError(f"duration must be > 0 s, got {duration}")
    if not (idle_power >= 0):
        raise InvalidArgumentError(f"idle power must be >= 0 mW, got {idle_power}")
    joules = total.joules - idle_power / 1000.0 * duration
    clamped = joules < 0
    return EnergyEstimate(max(joules, 0.0), duration, EnergyMethod.NET_OF_IDLE, clamped)


def per_run_energy(net: EnergyEstimate, runs: int) -> EnergyEstimate:
    if isinstance(runs, bool) or not isinstance(runs, (int, np.integer)) or runs < 1:
        raise InvalidArgumentError(f"runs must be a positive integer, got {runs!r}")
    return EnergyEstimate(net.joules / runs, net.duration / runs, EnergyMethod.PER_RUN, net.clamped)


def trace_diagnostics(trace: PowerTrace, wall_duration: float) -> TraceDiagnostics:
    if not trace.samples:
        raise EmptyTraceError("cannot diagnose an empty trace")
    if not (wall_duration > 0):
        raise InvalidArgumentError(f"wall_duration must be > 0 s, got {wall_duration}")
    # tolerate float noise such as 42.91 * 10 = 429.09999999999997
    expected = math.floor(wall_duration * trace.nominal_rate + 1e-9)
    actual = len(trace.samples)
    loss = max(0.0, 1.0 - actual / expected) if expected > 0 else 0.0
    gaps = np.diff(trace.timestamps)
    return TraceDiagnostics(
        expected_samples=expected,
        actual_samples=actual,
        loss_ratio=loss,
        mean_interval=trace.mean_interval,
        max_gap=float(gaps.max()) if gaps.size else 0.0,
    )


__all__ = [
    "EnergyEstimate",
    "EnergyMethod",
    "PowerSample",
    "PowerTrace",
    "SummaryStats",
    "TraceDiagnostics",
    "integrate_power_trace",
    "integrate_window",
    "net_energy",
    "per_run_energy",
    "summarize_trace",
    "trace_diagnostics",
]
