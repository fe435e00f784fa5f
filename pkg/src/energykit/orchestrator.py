"""End-to-end measurement protocol.

Idle baseline first, then the workload bracketed by a sampler, then the
energy arithmetic: integrate, subtract idle draw at the baseline *mean*
over the workload's wall time, divide by the measured repetitions.
"""

from __future__ import annotations

import dataclasses
import logging
import re
import resource
import shlex
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Mapping

from .backends import Backend, PowercapBackend, idle_trace_from, resolve_backend
from .counters import _default_clock, max_safe_poll_interval
from .errors import (
    ExperimentFailedError,
    InvalidArgumentError,
    ParseError,
    TooFastWorkloadError,
)
from .trace import (
    EnergyEstimate,
    EnergyMethod,
    PowerTrace,
    SummaryStats,
    TraceDiagnostics,
    integrate_power_trace,
    integrate_window,
    net_energy,
    per_run_energy,
    summarize_trace,
    trace_diagnostics,
)

log = logging.getLogger(__name__)

# cooldown floors (ms) for components known to linger in high-power tail states
TAIL_STATE_FLOORS_MS = {
    "cpu-only": 0.0,
    "network": 5000.0,
    "gps": 5000.0,
    "sd-card": 5000.0,
}
DEFAULT_TDP_WATTS = 80.0
RUN_MARKER = re.compile(r"^##RUN (\d+) (START|END)\s*$")


@dataclass(frozen=True)
class ExperimentPlan:
    sampling_rate: float = 10.0  # Hz
    baseline_samples: int = 385
    runs: int = 10
    warmup_discard: int = 0
    cooldown: float = 0.0  # ms
    backend: str = "powercap"
    workload: tuple[str, ...] = ()
    idle_backend: str | None = None
    replay_speed: float = 0.0
    component_hint: str = "cpu-only"
    env: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "workload", tuple(self.workload))
        object.__setattr__(self, "env", dict(sorted(dict(self.env).items())))
        if not (self.sampling_rate > 0):
            raise InvalidArgumentError(f"sampling_rate must be > 0 Hz, got {self.sampling_rate}")
        if self.baseline_samples < 2:
            raise InvalidArgumentError(f"baseline_samples must be >= 2, got {self.baseline_samples}")
        if self.runs < 1:
            raise InvalidArgumentError(f"runs must be >= 1, got {self.runs}")
        if not 0 <= self.warmup_discard < self.runs:
            raise InvalidArgumentError(
                f"warmup_discard must be in [0, runs), got {self.warmup_discard} with runs={self.runs}"
            )
        if self.cooldown < 0:
            raise InvalidArgumentError("cooldown must be >= 0 ms")
        if self.replay_speed < 0:
            raise InvalidArgumentError("replay_speed must be >= 0")
        if self.component_hint not in TAIL_STATE_FLOORS_MS:
            raise InvalidArgumentError(
                f"component_hint must be one of {sorted(TAIL_STATE_FLOORS_MS)}, got {self.component_hint!r}"
            )

    @property
    def baseline_duration(self) -> float:
        """Seconds a live baseline takes to collect."""
        return self.baseline_samples / self.sampling_rate

    @property
    def measured_runs(self) -> int:
        return self.runs - self.warmup_discard


_PLAN_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentPlan)}


def parse_plan(text: str) -> ExperimentPlan:
    """Parse a ``key = value`` plan file.

    Keys are the :class:`ExperimentPlan` field names; ``workload`` is split
    shell-style and ``env.<name>`` lines fill the environment block.
    """
    values: dict = {}
    env: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ParseError(f"expected 'key = value', got {raw!r}", lineno)
        if key.startswith("env."):
            env[key[4:]] = value
            continue
        if key not in _PLAN_FIELDS or key == "env":
            raise ParseError(f"unknown plan key {key!r}", lineno)
        try:
            if key == "workload":
                values[key] = tuple(shlex.split(value))
            elif key in ("baseline_samples", "runs", "warmup_discard"):
                values[key] = int(value)
            elif key in ("sampling_rate", "cooldown", "replay_speed"):
                values[key] = float(value)
            elif key == "idle_backend":
                values[key] = value or None
            else:
                values[key] = value
        except ValueError:
            raise ParseError(f"bad value for {key}: {value!r}", lineno) from None
    try:
        return ExperimentPlan(**values, env=env)
    except InvalidArgumentError as exc:
        raise ParseError(str(exc)) from exc


def format_plan(plan: ExperimentPlan) -> str:
    lines = []
    for name in _PLAN_FIELDS:
        value = getattr(plan, name)
        if name == "env":
            lines.extend(f"env.{k} = {v}" for k, v in value.items())
        elif name == "workload":
            lines.append(f"workload = {shlex.join(value)}")
        elif value is None:
            lines.append(f"{name} =")
        else:
            lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def load_plan(path: str | Path) -> ExperimentPlan:
    return parse_plan(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class BaselineResult:
    stats: SummaryStats
    trace: PowerTrace
    requested: int = 0
    wall_duration: float | None = None  # s; None for virtual replay

    @property
    def short(self) -> bool:
        return self.stats.count < self.requested


@dataclass(frozen=True)
class RunBoundary:
    index: int
    start: float  # us
    end: float  # us


@dataclass(frozen=True)
class ExperimentResult:
    plan: ExperimentPlan
    baseline: BaselineResult
    workload_trace: PowerTrace
    wall_duration: float  # s
    total_energy: EnergyEstimate
    net_energy_value: EnergyEstimate
    measured_net: EnergyEstimate
    per_run: EnergyEstimate
    diagnostics: TraceDiagnostics
    workload_start: float  # us, sampler time base
    workload_end: float
    run_boundaries: tuple[RunBoundary, ...] | None = None
    warmup_mode: str = "none"  # none | markers | time-proportional
    workload_cpu_time: float | None = None  # s, recorded only, never used in arithmetic
    warnings: tuple[str, ...] = ()


def check_tail_state_buffer(plan: ExperimentPlan, component_hint: str | None = None) -> str | None:
    """Advisory when the cooldown is shorter than the component's tail-state floor."""
    hint = component_hint or plan.component_hint
    if hint not in TAIL_STATE_FLOORS_MS:
        raise InvalidArgumentError(f"unknown component hint {hint!r}")
    floor = TAIL_STATE_FLOORS_MS[hint]
    if plan.cooldown < floor:
        return (
            f"cooldown {plan.cooldown:g} ms is below the {floor:g} ms floor for {hint}: "
            f"the component may still be in a high-power tail state when the next phase starts"
        )
    return None


def _poll_interval_warning(plan: ExperimentPlan, backend: Backend) -> str | None:
    if not isinstance(backend, PowercapBackend):
        return None
    try:
        spec = backend.spec
    except Exception:
        return None
    tdp = backend.max_power_watts() or DEFAULT_TDP_WATTS
    limit = max_safe_poll_interval(spec, tdp)
    if 1.0 / plan.sampling_rate > limit:
        return f"polling every {1 / plan.sampling_rate:g} s exceeds the {limit:g} s safe interval; counter may wrap twice"
    return None


def backend_for(plan: ExperimentPlan) -> Backend:
    idle = idle_trace_from(plan.idle_backend) if plan.idle_backend else None
    return resolve_backend(plan.backend, plan.replay_speed, idle)


def measure_idle(plan: ExperimentPlan, backend: Backend | None = None, clock=_default_clock) -> BaselineResult:
    """Collect ``plan.baseline_samples`` idle samples and summarise them.

    The machine should be quiescent while this runs; nothing here can check.
    """
    if backend is None:
        backend = backend_for(plan)
    started = time.monotonic()
    trace = backend.collect_baseline(plan.baseline_samples, plan.sampling_rate, clock)
    wall = None if backend.virtual else time.monotonic() - started
    return BaselineResult(summarize_trace(trace), trace, plan.baseline_samples, wall)


class _MarkerReader(threading.Thread):
    """Reads workload stdout, timestamps run markers, forwards everything else."""

    def __init__(self, stream: IO[str], now: Callable[[], float], passthrough: IO[str] | None):
        super().__init__(daemon=True)
        self.stream = stream
        self.now = now
        self.passthrough = passthrough
        self.events: list[tuple[int, str, float]] = []

    def run(self) -> None:
        for line in self.stream:
            m = RUN_MARKER.match(line.rstrip("\n"))
            if m:
                self.events.append((int(m.group(1)), m.group(2), self.now()))
            elif self.passthrough is not None:
                self.passthrough.write(line)
                self.passthrough.flush()

    def boundaries(self) -> tuple[RunBoundary, ...]:
        starts: dict[int, float] = {}
        out = []
        for k, kind, t in self.events:
            if kind == "START":
                starts[k] = t
            elif k in starts:
                out.append(RunBoundary(k, starts.pop(k), t))
        return tuple(sorted(out, key=lambda b: b.index))


def _children_cpu() -> float:
    usage = resource.getrusage(resource.RUSAGE_CHILDREN)
    return usage.ru_utime + usage.ru_stime


def _launch(workload: tuple[str, ...]) -> subprocess.Popen:
    if not workload:
        raise InvalidArgumentError("no workload command given")
    try:
        return subprocess.Popen(list(workload), stdout=subprocess.PIPE, text=True, bufsize=1)
    except OSError as exc:
        raise ExperimentFailedError(f"cannot start workload {workload[0]!r}: {exc}") from exc


def _crop(trace: PowerTrace, start_us: float, end_us: float) -> PowerTrace:
    """Samples from the one in effect at ``start_us`` through the first at/after ``end_us``."""
    ts = trace.timestamps
    lo = max(int((ts <= start_us).sum()) - 1, 0)
    after = [i for i in range(len(ts)) if ts[i] >= end_us]
    hi = after[0] + 1 if after else len(ts)
    return trace.slice(lo, hi)


def run_experiment(
    plan: ExperimentPlan,
    backend: Backend | None = None,
    idle_backend: Backend | None = None,
    clock=_default_clock,
    passthrough: IO[str] | None = None,
) -> ExperimentResult:
    """Run the full protocol for ``plan`` and return its energy accounting.

    Workload stdout lines other than run markers are forwarded to
    ``passthrough`` (stderr by default) unchanged.
    """
    if backend is None:
        backend = backend_for(plan)
    idle_backend = idle_backend or backend
    passthrough = sys.stderr if passthrough is None else passthrough

    warnings = [w for w in (check_tail_state_buffer(plan), _poll_interval_warning(plan, backend)) if w]
    for w in warnings:
        log.warning(w)

    baseline = measure_idle(plan, idle_backend, clock)
    boundaries: tuple[RunBoundary, ...] = ()
    cpu_time: float | None = None

    if backend.virtual:
        proc = _launch(plan.workload)
        reader = _MarkerReader(proc.stdout, lambda: 0.0, passthrough)
        reader.start()
        returncode = proc.wait()
        reader.join()
        full = backend.recorded_trace
        if returncode != 0:
            raise ExperimentFailedError(f"workload exited with status {returncode}", full, returncode)
        if len(full) < 2:
            raise TooFastWorkloadError("replay trace has fewer than 2 samples", full)
        workload_trace = full
        start_us = full.samples[0].timestamp
        end_us = start_us + full.span
        wall = full.span / 1e6
    else:
        epoch = clock()
        session = backend.open_session(plan.sampling_rate, clock, epoch)
        session.start()
        now = lambda: clock() - epoch  # noqa: E731
        cpu_before = _children_cpu()
        start_us = now()
        try:
            proc = _launch(plan.workload)
        except BaseException:
            session.stop()
            raise
        reader = _MarkerReader(proc.stdout, now, passthrough)
        reader.start()
        returncode = proc.wait()
        end_us = now()
        reader.join()
        cpu_time = _children_cpu() - cpu_before
        boundaries = reader.boundaries()
        if plan.cooldown > 0:
            time.sleep(plan.cooldown / 1000.0)
        full = session.stop(until_us=end_us)
        if returncode != 0:
            raise ExperimentFailedError(f"workload exited with status {returncode}", full, returncode)
        workload_trace = _crop(full, start_us, end_us) if len(full) else full
        if len(workload_trace) < 2:
            raise TooFastWorkloadError(
                f"sampler produced {len(workload_trace)} sample(s) during the workload; "
                f"raise the sampling rate or lengthen the workload",
                full,
            )
        wall = (end_us - start_us) / 1e6

    if backend.virtual and plan.cooldown > 0:
        time.sleep(plan.cooldown / 1000.0)

    if backend.virtual:
        total = integrate_power_trace(workload_trace)
    else:
        # clip the held samples to the workload window so bracket slack does not count
        total = EnergyEstimate(integrate_window(full, start_us, end_us), wall, EnergyMethod.TRACE_INTEGRATION)
    idle_mw = baseline.stats.mean
    net = net_energy(total, idle_mw, wall)

    n, d = plan.runs, plan.warmup_discard
    if d == 0:
        mode, measured = "none", net
    elif len(boundaries) >= n:
        mode = "markers"
        ws, we = boundaries[d].start, boundaries[n - 1].end
        joules = integrate_window(workload_trace, ws, we)
        measured = net_energy(EnergyEstimate(joules, (we - ws) / 1e6, EnergyMethod.TRACE_INTEGRATION),
                              idle_mw, (we - ws) / 1e6)
    else:
        mode = "time-proportional"
        first = workload_trace.samples[0].timestamp
        ws = first + workload_trace.span * d / n
        we = first + workload_trace.span
        joules = integrate_window(workload_trace, ws, we)
        window_s = wall * (n - d) / n
        measured = net_energy(EnergyEstimate(joules, window_s, EnergyMethod.TRACE_INTEGRATION), idle_mw, window_s)
        if boundaries:
            warnings.append(f"found {len(boundaries)} run markers for {n} runs; discarded warm-up by time share")
    per_run = per_run_energy(measured, n - d)

    return ExperimentResult(
        plan=plan,
        baseline=baseline,
        workload_trace=workload_trace,
        wall_duration=wall,
        total_energy=total,
        net_energy_value=net,
        measured_net=measured,
        per_run=per_run,
        diagnostics=trace_diagnostics(workload_trace, wall),
        workload_start=start_us,
        workload_end=end_us,
        run_boundaries=boundaries or None,
        warmup_mode=mode,
        workload_cpu_time=cpu_time,
        warnings=tuple(warnings),
    )


__all__ = [
    "BaselineResult",
    "ExperimentPlan",
    "ExperimentResult",
    "RunBoundary",
    "check_tail_state_buffer",
    "format_plan",
    "load_plan",
    "measure_idle",
    "parse_plan",
    "run_experiment",
]
