import csv
import math

from cpmsim.report import format_metrics, write_metrics_csv, write_report
from cpmsim.runner import compute_metrics, run_experiment
from cpmsim.scenario import load_fixture

NS = 1_000_000_000


def short_run():
    return run_experiment(load_fixture("platoon8"), duration_ns=2 * NS)


def test_metrics_csv(tmp_path):
    res = short_run()
    path = tmp_path / "metrics.csv"
    write_metrics_csv(res.metrics, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "value"]
    table = dict(rows[1:])
    assert float(table["collisions"]) == res.metrics.value("collisions")
    assert "tracking_rms" in table
    # Per-vehicle rows come along too.
    assert any(k.startswith("tracking_rms_vehicle_") for k in table)


def test_write_report_produces_figures(tmp_path):
    res = short_run()
    out = tmp_path / "report"
    files = write_report(res.trace, res.metrics, str(out))
    names = {f.rsplit("/", 1)[-1] for f in files}
    assert {"paths.png", "min_gap.png", "tracking.png",
            "timing.png", "metrics.csv"} <= names
    for f in files:
        import os
        assert os.path.getsize(f) > 0


def test_format_metrics_readable():
    res = short_run()
    text = format_metrics(res.metrics)
    assert "collisions" in text
    assert "tracking_rms" in text
    for line in text.splitlines():
        assert len(line.split()) >= 2


def test_format_metrics_handles_nan():
    res = short_run()
    res.metrics.scalars["gap_rel_err_max"] = math.nan
    text = format_metrics(res.metrics)
    assert "nan" in text or "gap_rel_err_max" in text
