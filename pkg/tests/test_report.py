import json

import pytest

from energykit.counters import parse_sampler_log
from energykit.errors import ParseError, ReportIOError
from energykit.orchestrator import ExperimentPlan, measure_idle, run_experiment
from energykit.report import (
    SAMPLES_KEY,
    UNIT_DECIMALS,
    emit_report,
    load_report,
    parse_report,
    render,
    write_output,
)
from energykit.stats import overhead_report


@pytest.fixture(scope="module")
def replica_run():
    return run_experiment(ExperimentPlan(backend="replay:paper_fixture", workload=("true",), env={"power": "ac"}))


def numeric_keys(node, parent=""):
    """Yield (key, value) for every number in a report, skipping embedded sample arrays."""
    if isinstance(node, dict):
        for k, v in node.items():
            if k == SAMPLES_KEY:
                continue
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                yield k, v
            else:
                yield from numeric_keys(v, k)
    elif isinstance(node, list):
        for v in node:
            yield from numeric_keys(v, parent)


class TestReport:
    def test_contains_net_at_three_decimals(self, replica_run):
        doc = emit_report(replica_run).decode()
        assert '"energy_j": 648.354' in doc
        assert '"energy_j": 64.835' in doc

    def test_round_trip(self, replica_run):
        data = emit_report(replica_run)
        back = parse_report(data)
        assert emit_report(back) == data
        assert back.per_run.joules == pytest.approx(replica_run.per_run.joules, abs=5e-4)
        assert back.plan == replica_run.plan
        assert len(back.workload_trace) == len(replica_run.workload_trace)

    def test_baseline_round_trip(self):
        b = measure_idle(ExperimentPlan(backend="replay:constant_10w"))
        data = emit_report(b)
        assert emit_report(parse_report(data)) == data

    def test_deterministic(self, replica_run):
        assert emit_report(replica_run) == emit_report(replica_run)

    def test_every_number_has_unit(self, replica_run):
        doc = json.loads(emit_report(replica_run))
        keys = list(numeric_keys(doc))
        assert keys
        for k, _ in keys:
            assert any(k.endswith(s) for s in UNIT_DECIMALS), k

    def test_energy_carries_method(self, replica_run):
        doc = json.loads(emit_report(replica_run))
        for e in doc["energy"].values():
            assert {"energy_j", "method", "clamped"} <= e.keys()
        assert doc["schema_version"] == 1
        assert doc["environment"] == {"power": "ac"}

    def test_unitless_number_rejected(self):
        with pytest.raises(ValueError):
            render({"schema_version": 1, "energy": 1.0})

    def test_fixed_decimals(self):
        assert render({"a_j": 1.0, "b_mw": 2.5, "c_count": 3}) == b'{\n  "a_j": 1.000,\n  "b_mw": 2.500,\n  "c_count": 3\n}\n'

    def test_overhead_document(self, replica_run):
        high = run_experiment(ExperimentPlan(sampling_rate=1000, backend="replay:paper_fixture_1khz", workload=("true",)))
        doc = json.loads(emit_report(overhead_report(replica_run, high)))
        assert doc["relative_difference_pct"] == pytest.approx(5.6, abs=0.05)
        assert doc["comparison"]["sidedness"] == "two-sided"

    def test_bad_documents(self):
        with pytest.raises(ParseError):
            parse_report(b"not json")
        with pytest.raises(ParseError):
            parse_report(b'{"kind": "experiment"}')
        with pytest.raises(ParseError):
            parse_report(b'{"schema_version": 99}')
        with pytest.raises(ParseError):
            parse_report(b'{"schema_version": 1, "kind": "experiment"}')


class TestPlotData:
    def test_record_per_sample(self, replica_run):
        data = emit_report(replica_run, "plotdata")
        lines = data.decode().splitlines()
        assert lines[0] == "timestamp_us,power_mw"
        assert len(lines) - 1 == len(replica_run.workload_trace) == 406

    def test_is_generic_power_csv(self, replica_run):
        back = parse_sampler_log(emit_report(replica_run, "plotdata"), nominal_rate=10.0)
        assert back.samples == replica_run.workload_trace.samples


class TestIO:
    def test_write_failure_names_path(self, tmp_path):
        target = tmp_path / "missing" / "r.json"
        with pytest.raises(ReportIOError) as exc:
            write_output(b"x", target)
        assert str(target) in str(exc.value)

    def test_load_missing(self, tmp_path):
        with pytest.raises(ReportIOError):
            load_report(tmp_path / "nope.json")

    def test_write_and_load(self, tmp_path, replica_run):
        p = tmp_path / "r.json"
        write_output(emit_report(replica_run), p)
        assert load_report(p).plan == replica_run.plan
