import os

import pytest

from cpmsim.cli import main
from cpmsim.scenario import FIXTURE_NAMES

MINIMAL = """cpmscenario v1
name tiny
map outer_circle
kind circle
topology centralized
seed 7
duration_s 2
require collisions == 0
vehicle 1 internal path=loop s=0.0 speed=0.8
vehicle 2 internal path=loop s=3.0 speed=0.8
"""


def test_fixtures_list(capsys):
    assert main(["fixtures", "list"]) == 0
    out = capsys.readouterr().out.split()
    assert out == list(FIXTURE_NAMES)


def test_run_writes_trace_and_metrics(tmp_path, capsys):
    scn = tmp_path / "tiny.scn"
    scn.write_text(MINIMAL)
    trace = tmp_path / "out.trace"
    metrics = tmp_path / "out.csv"
    rc = main(["run", str(scn), "--seed", "1",
               "--trace", str(trace), "--metrics", str(metrics)])
    assert rc == 0
    assert trace.stat().st_size > 0
    assert metrics.read_text().startswith("metric,value")
    out = capsys.readouterr().out
    assert "require collisions == 0" in out
    assert "pass" in out


def test_run_duration_override(tmp_path):
    scn = tmp_path / "tiny.scn"
    scn.write_text(MINIMAL)
    trace = tmp_path / "t.trace"
    assert main(["run", str(scn), "--duration", "0.5", "--trace", str(trace)]) == 0
    from cpmsim.runner import read_trace
    assert len(read_trace(trace).periods) == 25  # 0.5 s at 20 ms


def test_run_failing_requirement(tmp_path, capsys):
    scn = tmp_path / "strict.scn"
    scn.write_text(MINIMAL + "require tracking_rms <= 0.0\n")
    rc = main(["run", str(scn), "--duration", "1"])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out


def test_run_bad_scenario_exits_2(tmp_path, capsys):
    scn = tmp_path / "bad.scn"
    scn.write_text("not a scenario\n")
    assert main(["run", str(scn)]) == 2
    assert "error:" in capsys.readouterr().err


def test_compare_equal_and_different(tmp_path, capsys):
    scn = tmp_path / "tiny.scn"
    scn.write_text(MINIMAL)
    a, b, c = (tmp_path / n for n in ("a.trace", "b.trace", "c.trace"))
    main(["run", str(scn), "--seed", "3", "--duration", "1", "--trace", str(a)])
    main(["run", str(scn), "--seed", "3", "--duration", "1", "--trace", str(b)])
    main(["run", str(scn), "--seed", "4", "--duration", "1", "--trace", str(c)])
    capsys.readouterr()
    assert main(["compare", str(a), str(b)]) == 0
    assert capsys.readouterr().out.strip() == "equal"
    assert main(["compare", str(a), str(c)]) == 1
    assert "divergence" in capsys.readouterr().out


def test_metrics_command(tmp_path, capsys):
    scn = tmp_path / "tiny.scn"
    scn.write_text(MINIMAL)
    trace = tmp_path / "t.trace"
    main(["run", str(scn), "--duration", "1", "--trace", str(trace)])
    capsys.readouterr()
    jsonl = tmp_path / "t.jsonl"
    assert main(["metrics", str(trace), "--jsonl", str(jsonl)]) == 0
    out = capsys.readouterr().out
    assert "collisions" in out
    assert jsonl.stat().st_size > 0


def test_metrics_rejects_garbage(tmp_path, capsys):
    p = tmp_path / "x"
    p.write_bytes(b"garbage")
    assert main(["metrics", str(p)]) == 2


def test_run_report_directory(tmp_path):
    scn = tmp_path / "tiny.scn"
    scn.write_text(MINIMAL)
    rep = tmp_path / "rep"
    assert main(["run", str(scn), "--duration", "1", "--report", str(rep)]) == 0
    produced = set(os.listdir(rep))
    assert {"paths.png", "min_gap.png", "tracking.png",
            "timing.png", "metrics.csv"} <= produced


def test_cpmsim_log_env(monkeypatch, capsys):
    monkeypatch.setenv("CPMSIM_LOG", "debug")
    assert main(["fixtures", "list"]) == 0


def test_missing_subcommand_exits():
    with pytest.raises(SystemExit):
        main([])
