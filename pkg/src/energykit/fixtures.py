"""Built-in synthetic replay fixtures.

The ``paper_*`` fixtures model a Fannkuch-Redux run: 42.91 s at a nominal
10 Hz that delivered 406 samples, 46.79 s at a nominal 1 kHz that delivered
10 019, and an idle baseline averaging 106 mW.  Workload powers are seeded
Gaussian noise shifted so the integrated energy hits fixed totals.  Only
those aggregates are meaningful; individual samples are synthetic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from functools import lru_cache

from .trace import MW_US_TO_J, PowerTrace

IDLE_MEAN_MW = 106.0


@dataclass(frozen=True)
class Fixture:
    name: str
    workload: PowerTrace
    idle: PowerTrace
    description: str


def _irregular_timestamps(count: int, duration_us: int) -> list[int]:
    step = duration_us / count
    return [round(k * step) for k in range(count)]


def _workload_trace(
    name: str,
    count: int,
    duration_s: float,
    nominal_rate: float,
    mean_mw: float,
    std_mw: float,
    net_joules: float | None,
    total_joules: float | None,
    seed: int,
) -> PowerTrace:
    ts = _irregular_timestamps(count, round(duration_s * 1e6))
    rng = random.Random(seed)
    raw = [max(0.0, rng.gauss(mean_mw, std_mw)) for _ in ts]
    widths = [b - a for a, b in zip(ts, ts[1:])]
    mean_interval = (ts[-1] - ts[0]) / (count - 1)
    widths.append(mean_interval)
    span_us = math.fsum(widths)
    if total_joules is None:
        total_joules = net_joules + IDLE_MEAN_MW / 1000.0 * span_us / 1e6
    energy = math.fsum(p * w for p, w in zip(raw, widths)) * MW_US_TO_J
    shift = (total_joules - energy) / MW_US_TO_J / span_us
    powers = [round(p + shift, 3) for p in raw]
    return PowerTrace.from_arrays(ts, powers, nominal_rate, f"fixture:{name}")


def _skewed_idle(name: str, mean_mw: float, floor_mw: float, spikes: int) -> PowerTrace:
    n = 385
    spike_mw = round(floor_mw + (mean_mw - floor_mw) * n / spikes, 3)
    every = n // spikes
    powers = [spike_mw if k % every == every // 2 and k // every < spikes else floor_mw for k in range(n)]
    return PowerTrace.from_arrays([k * 100_000 for k in range(n)], powers, 10.0, f"fixture:{name}")


def _constant(name: str, count: int, rate: float, power_mw: float) -> PowerTrace:
    step = round(1e6 / rate)
    return PowerTrace.from_arrays([k * step for k in range(count)], [power_mw] * count, rate, f"fixture:{name}")


@lru_cache(maxsize=None)
def get_fixture(name: str) -> Fixture:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(sorted(FIXTURES))}")
    return FIXTURES[name]()


def _paper_idle() -> PowerTrace:
    # 20 spikes of 1712 mW over an 18 mW floor: mean exactly 106, median 18
    return _skewed_idle("paper_idle", IDLE_MEAN_MW, 18.0, 20)


FIXTURES = {
    "paper_fixture": lambda: Fixture(
        "paper_fixture",
        _workload_trace("paper_fixture", 406, 42.91, 10.0, 15215.0, 610.0, None, 652.902, seed=10),
        _paper_idle(),
        "10 Hz replica: 406 samples over 42.91 s, 652.902 J total, 106 mW idle",
    ),
    "paper_fixture_1khz": lambda: Fixture(
        "paper_fixture_1khz",
        _workload_trace("paper_fixture_1khz", 10_019, 46.79, 1000.0, 14740.0, 899.0, 684.754, None, seed=1000),
        _paper_idle(),
        "1 kHz replica: 10019 samples over 46.79 s, 684.754 J net of 106 mW idle",
    ),
    "paper_idle_skewed": lambda: Fixture(
        "paper_idle_skewed",
        _skewed_idle("paper_idle_skewed", 106.818, 18.0, 20),
        _skewed_idle("paper_idle_skewed", 106.818, 18.0, 20),
        "heavy-tailed idle: mean 106.818 mW, median 18 mW",
    ),
    "constant_10w": lambda: Fixture(
        "constant_10w",
        _constant("constant_10w", 600, 10.0, 10_000.0),
        _constant("constant_idle_100mw", 385, 10.0, 100.0),
        "60 s of constant 10 W at 10 Hz with a constant 100 mW idle",
    ),
}
