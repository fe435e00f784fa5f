from __future__ import annotations

import pytest

from energykit.trace import PowerTrace


def make_trace(powers, interval_us=100_000, start_us=0, rate=None, label="test"):
    rate = rate if rate is not None else 1e6 / interval_us
    ts = [start_us + k * interval_us for k in range(len(powers))]
    return PowerTrace.from_arrays(ts, powers, rate, label)


@pytest.fixture
def constant_10w():
    # 50 samples of 10 W at exactly 10 Hz: 5 s
    return make_trace([10_000.0] * 50)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
