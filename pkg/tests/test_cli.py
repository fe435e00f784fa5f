import json
import subprocess
import sys

import pytest

from energykit.cli import main
from energykit.counters import serialize_power_csv

from conftest import make_trace


def run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def test_samplesize(capsys):
    rc, out, _ = run(capsys, "samplesize", "--confidence", "0.95", "--margin", "0.05")
    assert rc == 0 and out == "385\n"


def test_samplesize_bad_input(capsys):
    rc, _, err = run(capsys, "samplesize", "--confidence", "1.5")
    assert rc == 1 and "confidence" in err


def test_measure_paper_fixture(capsys):
    rc, out, _ = run(capsys, "measure", "--backend", "replay:paper_fixture", "--runs", "10", "--", "true")
    assert rc == 0
    doc = json.loads(out)
    assert doc["energy"]["per_run"]["energy_j"] == pytest.approx(64.835, abs=5e-4)
    assert doc["energy"]["net"]["energy_j"] == pytest.approx(648.354, abs=5e-4)


def test_measure_without_workload(capsys):
    rc, _, err = run(capsys, "measure", "--backend", "replay:paper_fixture")
    assert rc == 2 and "workload" in err


def test_workload_on_other_command(capsys):
    rc, _, _ = run(capsys, "samplesize", "--", "true")
    assert rc == 2


def test_unknown_subcommand(capsys):
    rc, _, err = run(capsys, "dance")
    assert rc == 2 and "usage" in err


def test_unknown_flag(capsys):
    rc, _, _ = run(capsys, "samplesize", "--bogus")
    assert rc == 2


def test_failing_workload_exit_1_and_partial(capsys, tmp_path):
    out = tmp_path / "r.json"
    rc, _, err = run(capsys, "measure", "--backend", "replay:constant_10w", "-o", str(out), "--", "false")
    assert rc == 1 and "failed" in err
    assert (tmp_path / "r.json.partial.csv").read_text().startswith("timestamp_us,power_mw\n")


def test_live_backend_needs_disclosure(capsys):
    rc, _, err = run(capsys, "measure", "--backend", "powercap", "--", "true")
    assert rc == 2 and "env-note" in err


def test_live_backend_missing_hardware(capsys, tmp_path):
    rc, _, err = run(capsys, "baseline", "--backend", f"powercap:{tmp_path}/energy_uj", "--env-note", "power=ac")
    assert rc == 1 and "UnsupportedPlatformError" in err


def test_plotdata(capsys):
    rc, out, _ = run(capsys, "measure", "--backend", "replay:paper_fixture", "--format", "plotdata", "--", "true")
    assert rc == 0 and len(out.splitlines()) == 407


def test_baseline(capsys):
    rc, out, _ = run(capsys, "baseline", "--backend", "replay:paper_idle_skewed", "--env-note", "governor=powersave")
    doc = json.loads(out)
    assert rc == 0
    assert doc["baseline"]["median_mw"] == 18.0
    assert doc["environment"] == {"governor": "powersave"}


def test_plan_file_and_override(capsys, tmp_path):
    plan = tmp_path / "plan.txt"
    plan.write_text("backend = replay:paper_fixture\nruns = 5\nworkload = true\nenv.power = battery\n")
    rc, out, _ = run(capsys, "measure", "--plan", str(plan), "--runs", "10")
    doc = json.loads(out)
    assert rc == 0
    assert doc["plan"]["run_count"] == 10
    assert doc["environment"]["power"] == "battery"


def test_bad_plan_file(capsys, tmp_path):
    plan = tmp_path / "plan.txt"
    plan.write_text("colour = blue\n")
    rc, _, err = run(capsys, "measure", "--plan", str(plan), "--", "true")
    assert rc == 1 and "colour" in err


def test_compare(capsys, tmp_path):
    low, high = tmp_path / "low.json", tmp_path / "high.json"
    assert main(["measure", "--backend", "replay:paper_fixture", "-o", str(low), "--", "true"]) == 0
    assert main(["measure", "--backend", "replay:paper_fixture_1khz", "--rate-hz", "1000",
                 "-o", str(high), "--", "true"]) == 0
    rc, out, _ = run(capsys, "compare", str(low), str(high))
    doc = json.loads(out)
    assert rc == 0
    assert doc["relative_difference_pct"] == pytest.approx(5.6, abs=0.05)
    assert doc["comparison"]["magnitude"] in {"negligible", "small", "medium", "large"}


def test_compare_mismatched(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["measure", "--backend", "replay:constant_10w", "--runs", "2", "-o", str(a), "--", "true"])
    main(["measure", "--backend", "replay:constant_10w", "--runs", "3", "-o", str(b), "--", "true"])
    rc, _, err = run(capsys, "compare", str(a), str(b))
    assert rc == 1 and "runs" in err


def test_model_estimate(capsys, tmp_path):
    profile, costs = tmp_path / "p.csv", tmp_path / "c.csv"
    profile.write_text("operation_id,count\nalloc,100\nhash,50\n")
    costs.write_text("platform,test-box\noperation_id,millijoules_per_op\nalloc,2\nhash,1\n")
    rc, out, _ = run(capsys, "model", "estimate", "--profile", str(profile), "--costs", str(costs))
    assert rc == 0 and json.loads(out)["energy_j"] == 0.25


def test_model_estimate_missing_cost(capsys, tmp_path):
    profile, costs = tmp_path / "p.csv", tmp_path / "c.csv"
    profile.write_text("x,1\n")
    costs.write_text("platform,p\n")
    rc, _, err = run(capsys, "model", "estimate", "--profile", str(profile), "--costs", str(costs))
    assert rc == 1 and "x" in err
    rc, out, _ = run(capsys, "model", "estimate", "--profile", str(profile), "--costs", str(costs), "--lenient")
    assert rc == 0 and json.loads(out)["uncovered_operations"] == ["x"]


def test_model_calibrate(capsys, tmp_path):
    trace = tmp_path / "op.csv"
    trace.write_bytes(serialize_power_csv(make_trace([2000.0] * 10)))
    rc, out, _ = run(capsys, "model", "calibrate", "--op", f"alloc={trace}:1000", "--platform", "box")
    assert rc == 0
    assert out.splitlines()[0] == "platform,box"
    assert "alloc,2.0" in out


def test_model_calibrate_bad_spec(capsys):
    rc, _, _ = run(capsys, "model", "calibrate", "--op", "nonsense")
    assert rc == 2


def test_model_flops(capsys):
    rc, out, _ = run(capsys, "model", "flops", "--duration-s", "2", "--flops-rate", "4e13")
    doc = json.loads(out)
    assert rc == 0 and doc["kind"] == "flops-proxy"
    assert float(doc["flop_count"]) == 8e13


def test_align(capsys, tmp_path):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("reference_us,meter_us\n0,5000000\n1000000,6000000\n2000000,7000000\n")
    rc, out, _ = run(capsys, "align", "--pairs", str(pairs))
    doc = json.loads(out)
    assert rc == 0
    assert doc["offset_us"] == 5_000_000 and doc["drift_ratio"] == 1.0


def test_align_retimes_trace(capsys, tmp_path):
    pairs, trace = tmp_path / "pairs.csv", tmp_path / "t.csv"
    pairs.write_text("0,1000\n1000,2000\n")
    trace.write_bytes(serialize_power_csv(make_trace([1.0, 2.0], interval_us=500, start_us=1000)))
    rc, out, _ = run(capsys, "align", "--pairs", str(pairs), "--trace", str(trace))
    assert rc == 0 and out == "timestamp_us,power_mw\n0,1\n500,2\n"


def test_replay_fixture(capsys):
    rc, out, _ = run(capsys, "replay", "paper_fixture")
    assert rc == 0 and len(out.splitlines()) == 407


def test_replay_log(capsys, tmp_path):
    log = tmp_path / "pm.txt"
    log.write_text("CPU Power: 10 mW\nCPU Power: 20 mW\n")
    rc, out, _ = run(capsys, "replay", str(log), "--log-format", "powermetrics-text")
    assert rc == 0 and out == "timestamp_us,power_mw\n0,10\n100000,20\n"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "energykit", "samplesize"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "385\n"
