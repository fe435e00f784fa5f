"""Raw energy-counter decoding and sampler-log ingestion.

RAPL-style counters accumulate energy in platform-specific units and wrap at
the register width.  Everything here is a pure decoder except
:func:`poll_live_counter`, which reads a powercap ``energy_uj`` file.
"""

from __future__ import annotations

import io
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterator, Union

import numpy as np

from .errors import (
    DomainMismatchError,
    InvalidArgumentError,
    MalformedTraceError,
    ParseError,
    PrivilegeError,
    UnsupportedPlatformError,
)
from .trace import PowerSample, PowerTrace

SANDY_BRIDGE_UNIT_UJ = 15.3
HASWELL_UNIT_UJ = 61.0
# Haswell and Skylake share a unit.
ENERGY_UNIT_PRESETS = {
    "sandy-bridge": SANDY_BRIDGE_UNIT_UJ,
    "haswell": HASWELL_UNIT_UJ,
    "skylake": HASWELL_UNIT_UJ,
}

POWER_CSV_HEADER = "timestamp_us,power_mw"
COUNTER_CSV_HEADER = "timestamp_us,energy_raw,unit_ujoules,width_bits"
_POWERMETRICS_LINE = re.compile(r"CPU Power:\s*(\d+)\s*mW")


class Domain(str, Enum):
    PKG = "PKG"
    PP0 = "PP0"
    PP1 = "PP1"
    DRAM = "DRAM"


class SamplerLogFormat(str, Enum):
    GENERIC_POWER_CSV = "generic-power-csv"
    GENERIC_COUNTER_CSV = "generic-counter-csv"
    POWERMETRICS_TEXT = "powermetrics-text"


@dataclass(frozen=True)
class RaplDomainSpec:
    domain: Domain = Domain.PKG
    energy_unit: float = SANDY_BRIDGE_UNIT_UJ  # uJ per raw tick
    counter_width: int = 32
    # powercap counters wrap at max_energy_range_uj + 1, which is rarely a power of two
    wrap_range: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain(self.domain))
        if not (self.energy_unit > 0):
            raise InvalidArgumentError(f"energy_unit must be > 0 uJ, got {self.energy_unit}")
        if self.counter_width not in (32, 64):
            raise InvalidArgumentError(f"counter_width must be 32 or 64, got {self.counter_width}")
        if self.wrap_range is not None and self.wrap_range <= 0:
            raise InvalidArgumentError("wrap_range must be positive")

    @property
    def modulus(self) -> int:
        return self.wrap_range if self.wrap_range is not None else 1 << self.counter_width


@dataclass(frozen=True)
class CounterReading:
    raw: int
    timestamp: float  # us, monotonic
    domain: RaplDomainSpec

    def __post_init__(self):
        if not 0 <= self.raw < self.domain.modulus:
            raise InvalidArgumentError(
                f"raw value {self.raw} outside [0, {self.domain.modulus}) for this counter"
            )


def counter_delta(prev: CounterReading, curr: CounterReading) -> int:
    """Ticks elapsed between two readings, assuming at most one wraparound."""
    if prev.domain != curr.domain:
        raise DomainMismatchError(f"{prev.domain} vs {curr.domain}")
    return (curr.raw - prev.raw) % curr.domain.modulus


def raw_to_joules(ticks: int, spec: RaplDomainSpec) -> float:
    return ticks * spec.energy_unit * 1e-6


def wraparound_period(power: float, spec: RaplDomainSpec) -> float:
    """Seconds until a counter drawing ``power`` watts wraps once."""
    if not (power > 0):
        raise InvalidArgumentError(f"power must be > 0 W, got {power}")
    return spec.modulus * spec.energy_unit * 1e-6 / power


def max_safe_poll_interval(spec: RaplDomainSpec, tdp_watts: float) -> float:
    """Longest polling interval (s) that keeps a 2x margin below one wrap at TDP."""
    return wraparound_period(tdp_watts, spec) / 2


class MonotonicMicros:
    """Strictly increasing microsecond clock.

    ``time.monotonic_ns`` can return the same microsecond for back-to-back
    calls; this nudges ties forward by one microsecond.
    """

    def __init__(self, source=time.monotonic_ns):
        self._source = source
        self._last = -1
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            now = self._source() // 1000
            if now <= self._last:
                now = self._last + 1
            self._last = now
            return now


_default_clock = MonotonicMicros()

POWERCAP_ROOT = Path("/sys/class/powercap")
_POWERCAP_NAMES = {"core": Domain.PP0, "uncore": Domain.PP1, "dram": Domain.DRAM}


def default_powercap_path() -> Path:
    for candidate in (POWERCAP_ROOT / "intel-rapl:0" / "energy_uj",
                      POWERCAP_ROOT / "intel-rapl" / "intel-rapl:0" / "energy_uj"):
        if candidate.exists():
            return candidate
    return POWERCAP_ROOT / "intel-rapl:0" / "energy_uj"


def _read_optional(path: Path) -> str | None:
    try:
        return path.read_text().strip()
    except OSError:
        return None


def powercap_domain_spec(counter_path: str | os.PathLike) -> RaplDomainSpec:
    """Spec for a powercap counter: 1 uJ ticks, wrap range from the sibling file."""
    counter_path = Path(counter_path)
    name = _read_optional(counter_path.with_name("name")) or ""
    domain = _POWERCAP_NAMES.get(name, Domain.PKG)
    max_range = _read_optional(counter_path.with_name("max_energy_range_uj"))
    wrap = int(max_range) + 1 if max_range and max_range.isdigit() else None
    return RaplDomainSpec(domain, energy_unit=1.0, counter_width=64, wrap_range=wrap)


def poll_live_counter(
    domain_path: str | os.PathLike,
    spec: RaplDomainSpec | None = None,
    clock=_default_clock,
) -> CounterReading:
    path = Path(domain_path)
    try:
        text = path.read_text()
    except PermissionError as exc:
        raise PrivilegeError(f"cannot read {path}: permission denied (energy counters usually need root)") from exc
    except FileNotFoundError as exc:
        raise UnsupportedPlatformError(f"no energy counter at {path}") from exc
    except OSError as exc:
        raise UnsupportedPlatformError(f"cannot read {path}: {exc}") from exc
    ts = clock()
    try:
        raw = int(text.strip())
    except ValueError as exc:
        raise ParseError(f"counter file {path} does not hold an integer: {text.strip()!r}", 1) from exc
    if spec is None:
        spec = powercap_domain_spec(path)
    return CounterReading(raw, ts, spec)


# --- sampler logs -----------------------------------------------------------

Source = Union[str, bytes, os.PathLike, IO[bytes], IO[str]]


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, (str, os.PathLike)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}") from exc
    return data


def _number(field: str, lineno: int, what: str) -> float:
    try:
        value = float(field)
    except ValueError:
        raise ParseError(f"{what} {field!r} is not a number", lineno) from None
    if not np.isfinite(value):
        raise ParseError(f"{what} {field!r} is not finite", lineno)
    return value


def _maybe_int(value: float) -> float:
    return int(value) if value.is_integer() else value


def _infer_rate(timestamps: list[float]) -> float:
    if len(timestamps) < 2:
        return 1.0
    step = float(np.median(np.diff(timestamps)))
    return 1e6 / step if step > 0 else 1.0


def _checked_trace(ts: list[float], powers: list[float], rate: float | None, label: str) -> PowerTrace:
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            raise MalformedTraceError(f"timestamps not strictly increasing at record {i + 1}")
    return PowerTrace.from_arrays(ts, powers, rate or _infer_rate(ts), label)


def _parse_power_csv(text: str, rate: float | None, label: str) -> PowerTrace:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    if lines[0].rstrip("\r") != POWER_CSV_HEADER:
        raise ParseError(f"expected header {POWER_CSV_HEADER!r}", 1)
    ts: list[float] = []
    powers: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split(",")
        if len(fields) != 2:
            raise ParseError(f"expected 2 fields, got {len(fields)}", lineno)
        t = _number(fields[0], lineno, "timestamp")
        p = _number(fields[1], lineno, "power")
        if t < 0 or p < 0:
            raise ParseError("negative timestamp or power", lineno)
        ts.append(_maybe_int(t))
        powers.append(p)
    if not ts:
        raise ParseError("no records after header", 2)
    return _checked_trace(ts, powers, rate, label)


def _parse_counter_csv(text: str, rate: float | None, label: str) -> PowerTrace:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    if lines[0].rstrip("\r") != COUNTER_CSV_HEADER:
        raise ParseError(f"expected header {COUNTER_CSV_HEADER!r}", 1)
    readings: list[CounterReading] = []
    spec: RaplDomainSpec | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split(",")
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", lineno)
        t = _number(fields[0], lineno, "timestamp")
        try:
            raw = int(fields[1])
            width = int(fields[3])
        except ValueError:
            raise ParseError("energy_raw and width_bits must be integers", lineno) from None
        unit = _number(fields[2], lineno, "unit")
        try:
            row_spec = RaplDomainSpec(Domain.PKG, unit, width)
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), lineno) from None
        if spec is None:
            spec = row_spec
        elif row_spec != spec:
            raise ParseError("unit_ujoules and width_bits must be constant within a file", lineno)
        try:
            readings.append(CounterReading(raw, _maybe_int(t), spec))
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), lineno) from None
    if len(readings) < 2:
        raise ParseError("need at least 2 counter records to reconstruct power", len(lines) + 1)
    ts: list[float] = []
    powers: list[float] = []
    for i, (prev, curr) in enumerate(zip(readings, readings[1:]), start=2):
        dt = curr.timestamp - prev.timestamp
        if dt <= 0:
            raise MalformedTraceError(f"timestamps not strictly increasing at record {i}")
        joules = raw_to_joules(counter_delta(prev, curr), spec)
        # power over [prev, curr) is attributed to prev: zero-order hold forward
        ts.append(prev.timestamp)
        powers.append(joules / (dt * 1e-6) * 1000.0)
    return _checked_trace(ts, powers, rate, label)


def _parse_powermetrics(text: str, rate: float | None, label: str) -> PowerTrace:
    rate = rate or 10.0  # powermetrics -i 100
    step = 1e6 / rate
    powers = [float(m.group(1)) for m in map(_POWERMETRICS_LINE.search, text.splitlines()) if m]
    if not powers:
        raise ParseError("no 'CPU Power: <N> mW' lines found", 1)
    ts = [_maybe_int(round(k * step, 3)) for k in range(len(powers))]
    return PowerTrace.from_arrays(ts, powers, rate, label)


def parse_sampler_log(
    source: Source,
    format: SamplerLogFormat | str = SamplerLogFormat.GENERIC_POWER_CSV,
    nominal_rate: float | None = None,
    source_label: str | None = None,
) -> PowerTrace:
    """Parse a sampler log into a :class:`PowerTrace`.

    ``nominal_rate`` defaults to the inverse median sample spacing for CSV
    formats and to 10 Hz for powermetrics text, whose timestamps are implied
    by the sampling interval.
    """
    fmt = SamplerLogFormat(format)
    label = source_label or f"log:{fmt.value}"
    text = _read_text(source)
    if fmt is SamplerLogFormat.GENERIC_POWER_CSV:
        return _parse_power_csv(text, nominal_rate, label)
    if fmt is SamplerLogFormat.GENERIC_COUNTER_CSV:
        return _parse_counter_csv(text, nominal_rate, label)
    return _parse_powermetrics(text, nominal_rate, label)


def format_number(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def serialize_power_csv(trace: PowerTrace) -> bytes:
    buf = io.StringIO()
    buf.write(POWER_CSV_HEADER + "\n")
    for s in trace.samples:
        buf.write(f"{format_number(s.timestamp)},{format_number(s.power)}\n")
    return buf.getvalue().encode("utf-8")


def serialize_counter_csv(readings: list[CounterReading]) -> bytes:
    lines = [COUNTER_CSV_HEADER]
    for r in readings:
        lines.append(
            f"{format_number(r.timestamp)},{r.raw},{format_number(r.domain.energy_unit)},{r.domain.counter_width}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_trace(source: str | os.PathLike, nominal_rate: float | None = None) -> PowerTrace:
    """Load a generic-power-csv file, or a built-in fixture by name."""
    path = Path(source)
    if not path.exists():
        from .fixtures import FIXTURES, get_fixture

        if str(source) in FIXTURES:
            return get_fixture(str(source)).workload
    return parse_sampler_log(path, SamplerLogFormat.GENERIC_POWER_CSV, nominal_rate, f"replay:{source}")


def replay_trace(
    source: str | os.PathLike | PowerTrace,
    speed: float = 0.0,
    sleep=time.sleep,
    clock=time.monotonic,
) -> Iterator[PowerSample]:
    """Yield samples of a recorded trace.

    ``speed`` 0 emits as fast as possible; otherwise sample *k* is emitted
    once ``(t_k - t_0) / speed`` has elapsed since the first one.
    """
    if speed < 0:
        raise InvalidArgumentError(f"speed must be >= 0, got {speed}")
    trace = source if isinstance(source, PowerTrace) else load_trace(source)
    if not trace.samples:
        return
    t0 = trace.samples[0].timestamp
    start = clock()
    for s in trace.samples:
        if speed > 0:
            due = start + (s.timestamp - t0) / 1e6 / speed
            delay = due - clock()
            if delay > 0:
                sleep(delay)
        yield s


__all__ = [
    "COUNTER_CSV_HEADER",
    "CounterReading",
    "Domain",
    "ENERGY_UNIT_PRESETS",
    "MonotonicMicros",
    "POWER_CSV_HEADER",
    "RaplDomainSpec",
    "SamplerLogFormat",
    "counter_delta",
    "load_trace",
    "max_safe_poll_interval",
    "parse_sampler_log",
    "poll_live_counter",
    "powercap_domain_spec",
    "raw_to_joules",
    "replay_trace",
    "serialize_counter_csv",
    "serialize_power_csv",
    "wraparound_period",
]
