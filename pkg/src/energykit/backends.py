"""Power sources the orchestrator can sample from.

A backend does two jobs: collect a fixed number of idle samples, and run a
background sampling session bracketing a workload.  Replay backends at
speed 0 are *virtual*: the recorded trace is the measurement, no clock is
involved, and results are bit-for-bit reproducible.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from pathlib import Path

from .counters import (
    SamplerLogFormat,
    _default_clock,
    counter_delta,
    default_powercap_path,
    load_trace,
    parse_sampler_log,
    poll_live_counter,
    powercap_domain_spec,
    raw_to_joules,
    replay_trace,
)
from .errors import EnergyKitError, InvalidArgumentError, PartialBaselineError, UnsupportedPlatformError
from .trace import PowerSample, PowerTrace

log = logging.getLogger(__name__)


class SamplingSession:
    """Background sampler appending to a buffer until told to stop.

    Timestamps are microseconds since ``epoch`` on ``clock``.  ``start``
    returns once the first sample exists, so the buffer always begins before
    anything launched afterwards.
    """

    def __init__(self, clock, epoch: int, period_s: float, nominal_rate: float, label: str):
        self.clock = clock
        self.epoch = epoch
        self.period_s = period_s
        self.nominal_rate = nominal_rate
        self.label = label
        self.samples: list[PowerSample] = []
        self._stop = threading.Event()
        self._first = threading.Event()
        self._error: BaseException | None = None
        self._exhausted = False
        self._thread = threading.Thread(target=self._guarded, name=f"sampler-{label}", daemon=True)

    def now(self) -> int:
        return self.clock() - self.epoch

    def _append(self, sample: PowerSample) -> None:
        self.samples.append(sample)
        self._first.set()

    def _guarded(self) -> None:
        try:
            self._run()
        except BaseException as exc:  # surfaced from stop()
            self._error = exc
        finally:
            self._exhausted = True
            self._first.set()

    def _run(self) -> None:
        raise NotImplementedError

    def start(self, timeout: float = 5.0) -> None:
        self._thread.start()
        self._first.wait(timeout + 2 * self.period_s)
        if self._error is not None:
            raise self._error

    def stop(self, until_us: float | None = None) -> PowerTrace:
        """Stop once a sample at or after ``until_us`` exists (bounded wait)."""
        if until_us is not None:
            deadline = time.monotonic() + 3 * self.period_s + 0.5
            while (not self._exhausted and time.monotonic() < deadline
                   and not (self.samples and self.samples[-1].timestamp >= until_us)):
                time.sleep(min(self.period_s / 4, 0.01))
        self._stop.set()
        self._thread.join(timeout=5 * self.period_s + 1.0)
        if self._error is not None:
            raise self._error
        return PowerTrace(tuple(self.samples), self.nominal_rate, self.label)


class _PowercapSession(SamplingSession):
    def __init__(self, path: Path, spec, **kw):
        super().__init__(**kw)
        self.path = path
        self.spec = spec

    def _run(self) -> None:
        prev = poll_live_counter(self.path, self.spec, self.clock)
        due = time.monotonic()
        while True:
            due += self.period_s
            if self._stop.wait(max(0.0, due - time.monotonic())):
                return
            curr = poll_live_counter(self.path, self.spec, self.clock)
            dt = curr.timestamp - prev.timestamp
            joules = raw_to_joules(counter_delta(prev, curr), self.spec)
            self._append(PowerSample(prev.timestamp - self.epoch, joules / (dt * 1e-6) * 1000.0))
            prev = curr


class _ReplaySession(SamplingSession):
    def __init__(self, trace: PowerTrace, speed: float, **kw):
        super().__init__(**kw)
        self.trace = trace
        self.speed = speed

    def _run(self) -> None:
        start = self.now()
        t0 = self.trace.samples[0].timestamp
        for s in self.trace.samples:
            offset = (s.timestamp - t0) / self.speed
            wait = (start + offset - self.now()) / 1e6
            if wait > 0 and self._stop.wait(wait):
                return
            if self._stop.is_set():
                return
            self._append(PowerSample(max(start + offset, 0), s.power))


class Backend:
    label: str = "backend"
    virtual: bool = False

    def collect_baseline(self, count: int, rate: float, clock=_default_clock) -> PowerTrace:
        raise NotImplementedError

    def open_session(self, rate: float, clock, epoch: int) -> SamplingSession:
        raise NotImplementedError

    @property
    def recorded_trace(self) -> PowerTrace:
        raise NotImplementedError


class PowercapBackend(Backend):
    """Samples a Linux powercap ``energy_uj`` counter."""

    virtual = False

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path else default_powercap_path()
        self.label = f"powercap:{self.path}"
        self._spec = None

    @property
    def spec(self):
        if self._spec is None:
            if not self.path.exists():
                raise UnsupportedPlatformError(f"no energy counter at {self.path}")
            self._spec = powercap_domain_spec(self.path)
        return self._spec

    def max_power_watts(self) -> float | None:
        text = None
        try:
            text = self.path.with_name("constraint_0_max_power_uw").read_text().strip()
        except OSError:
            return None
        return int(text) / 1e6 if text.isdigit() and int(text) > 0 else None

    def collect_baseline(self, count: int, rate: float, clock=_default_clock) -> PowerTrace:
        spec = self.spec
        period = 1.0 / rate
        samples: list[PowerSample] = []
        try:
            prev = poll_live_counter(self.path, spec, clock)
            epoch = prev.timestamp
            due = time.monotonic()
            while len(samples) < count:
                due += period
                delay = due - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                curr = poll_live_counter(self.path, spec, clock)
                dt = curr.timestamp - prev.timestamp
                joules = raw_to_joules(counter_delta(prev, curr), spec)
                samples.append(PowerSample(prev.timestamp - epoch, joules / (dt * 1e-6) * 1000.0))
                prev = curr
        except EnergyKitError as exc:
            partial = PowerTrace(tuple(samples), rate, self.label)
            raise PartialBaselineError(f"baseline stopped after {len(samples)} samples: {exc}", partial) from exc
        return PowerTrace(tuple(samples), rate, self.label)

    def open_session(self, rate: float, clock, epoch: int) -> SamplingSession:
        return _PowercapSession(
            self.path, self.spec, clock=clock, epoch=epoch, period_s=1.0 / rate, nominal_rate=rate, label=self.label
        )


class ReplayBackend(Backend):
    """Serves a recorded trace, optionally paced in real time.

    Idle samples come from ``idle`` when given, otherwise from the workload
    trace itself; either is looped end to end if shorter than requested.
    """

    def __init__(self, trace: PowerTrace, idle: PowerTrace | None = None, speed: float = 0.0, label: str | None = None):
        if len(trace) < 1:
            raise InvalidArgumentError("replay trace is empty")
        if speed < 0:
            raise InvalidArgumentError(f"replay speed must be >= 0, got {speed}")
        self.trace = trace
        self.idle = idle
        self.speed = speed
        self.label = label or trace.source_label
        self.virtual = speed == 0

    @property
    def recorded_trace(self) -> PowerTrace:
        return self.trace

    def collect_baseline(self, count: int, rate: float, clock=_default_clock) -> PowerTrace:
        source = self.idle if self.idle is not None else self.trace
        base = source.samples
        t0 = base[0].timestamp
        cycle = source.span if len(base) > 1 else 1e6 / source.nominal_rate
        samples = []
        for k in range(count):
            s = base[k % len(base)]
            samples.append(PowerSample(s.timestamp - t0 + (k // len(base)) * cycle, s.power))
        trace = PowerTrace(tuple(samples), source.nominal_rate, source.source_label)
        if self.speed > 0:
            for _ in replay_trace(trace, self.speed):
                pass
        return trace

    def open_session(self, rate: float, clock, epoch: int) -> SamplingSession:
        if self.virtual:
            raise InvalidArgumentError("virtual replay has no live session")
        period = self.trace.mean_interval / 1e6 / self.speed if len(self.trace) > 1 else 1.0 / rate
        return _ReplaySession(
            self.trace, self.speed, clock=clock, epoch=epoch, period_s=period,
            nominal_rate=self.trace.nominal_rate, label=self.label,
        )


def resolve_backend(selector: str, replay_speed: float = 0.0, idle: PowerTrace | None = None) -> Backend:
    """Build a backend from ``powercap[:path]``, ``replay:<file|fixture>`` or ``log:<file>:<format>``."""
    kind, _, rest = selector.partition(":")
    if kind == "powercap":
        return PowercapBackend(rest or None)
    if kind == "replay":
        if not rest:
            raise InvalidArgumentError("replay backend needs a file or fixture name")
        if _is_fixture(rest):
            from .fixtures import get_fixture

            fx = get_fixture(rest)
            return ReplayBackend(fx.workload, idle if idle is not None else fx.idle, replay_speed, f"replay:{rest}")
        return ReplayBackend(load_trace(rest), idle, replay_speed, f"replay:{rest}")
    if kind == "log":
        path, sep, fmt = rest.rpartition(":")
        if not sep or not path:
            raise InvalidArgumentError("log backend syntax is log:<file>:<format>")
        try:
            fmt = SamplerLogFormat(fmt)
        except ValueError:
            raise InvalidArgumentError(f"unknown log format {fmt!r}") from None
        trace = parse_sampler_log(path, fmt, source_label=f"log:{path}")
        return ReplayBackend(trace, idle, replay_speed, f"log:{path}:{fmt.value}")
    raise InvalidArgumentError(f"unknown backend {selector!r}")


def idle_trace_from(selector: str) -> PowerTrace:
    """Idle source for an ``--idle-backend`` override.

    A fixture name yields the fixture's idle trace; any other replay or log
    source yields its recorded trace.
    """
    kind, _, rest = selector.partition(":")
    if kind == "replay" and _is_fixture(rest):
        from .fixtures import get_fixture

        return get_fixture(rest).idle
    backend = resolve_backend(selector)
    if not isinstance(backend, ReplayBackend):
        raise InvalidArgumentError("idle backend override must be a replay or log source")
    return backend.trace


def _is_fixture(name: str) -> bool:
    from .fixtures import FIXTURES

    return name in FIXTURES and not Path(name).exists()
