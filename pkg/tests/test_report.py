"""Report generation: delimited tables, markdown and figure files."""

import csv
import json

import pytest

from tmca.report import METRIC_COLUMNS, MISSING, ReportError, build_report, load_history


def _write_run(tmp_path, name, entries):
    rd = tmp_path / name
    rd.mkdir()
    with open(rd / "metrics.jsonl", "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    return rd


def _entry(epoch, **kw):
    e = {
        "epoch": epoch,
        "lr": 3e-4,
        "loss_total": 2.0 - 0.1 * epoch,
        "loss_seg": 1.0,
        "loss_ca": 1.0 - 0.1 * epoch,
        "val_jaccard": 50.0,
        "val_dice": 60.0 + epoch,
        "val_acc": 90.0,
    }
    e.update(kw)
    return e


def test_build_report_outputs(tmp_path):
    rd = _write_run(tmp_path, "run_a", [_entry(0), _entry(1)])
    out = tmp_path / "out"
    result = build_report([rd], out)
    assert result["runs"] == ["run_a"]
    assert (out / "report.md").is_file()
    assert (out / "run_a_metrics.csv").is_file()
    figures = [p.name for p in (out / "figures").iterdir()]
    assert sorted(figures) == ["loss_curves.png", "val_dice.png"]
    # figure files must be real PNGs, not empty placeholders
    for p in (out / "figures").iterdir():
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert p.stat().st_size > 1000


def test_csv_layout(tmp_path):
    rd = _write_run(tmp_path, "run_a", [_entry(0)])
    out = tmp_path / "out"
    build_report([rd], out)
    with open(out / "run_a_metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == METRIC_COLUMNS
    assert len(rows) == 2
    assert rows[1][0] == "0"


def test_missing_metric_flagged_not_dropped(tmp_path):
    # an epoch without val metrics still appears, with placeholder cells
    entries = [_entry(0, val_dice=None, val_jaccard=None, val_acc=None), _entry(1)]
    rd = _write_run(tmp_path, "run_a", entries)
    out = tmp_path / "out"
    build_report([rd], out)
    with open(out / "run_a_metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3
    dice_col = METRIC_COLUMNS.index("val_dice")
    assert rows[1][dice_col] == MISSING
    assert rows[2][dice_col] == "61"
    md = (out / "report.md").read_text()
    assert "| - |" in md


def test_rebuild_is_idempotent(tmp_path):
    rd = _write_run(tmp_path, "run_a", [_entry(0), _entry(1)])
    out = tmp_path / "out"
    build_report([rd], out)
    first = (out / "report.md").read_text()
    build_report([rd], out)
    assert (out / "report.md").read_text() == first


def test_multiple_runs_one_table_each(tmp_path):
    ra = _write_run(tmp_path, "alpha", [_entry(0)])
    rb = _write_run(tmp_path, "beta", [_entry(0), _entry(1)])
    out = tmp_path / "out"
    result = build_report([ra, rb], out)
    assert result["runs"] == ["alpha", "beta"]
    md = (out / "report.md").read_text()
    assert "## alpha" in md and "## beta" in md


def test_duplicate_run_names_rejected(tmp_path):
    ra = _write_run(tmp_path, "same", [_entry(0)])
    with pytest.raises(ReportError, match="duplicate"):
        build_report([ra, ra], tmp_path / "out")


def test_no_runs_rejected(tmp_path):
    with pytest.raises(ReportError):
        build_report([], tmp_path / "out")


def test_malformed_line_names_file_and_line(tmp_path):
    rd = tmp_path / "bad"
    rd.mkdir()
    (rd / "metrics.jsonl").write_text('{"epoch": 0}\nnot json\n')
    with pytest.raises(ReportError, match=r"metrics\.jsonl:2"):
        load_history(rd)


def test_missing_log_named(tmp_path):
    with pytest.raises(ReportError, match="no metrics.jsonl"):
        load_history(tmp_path)


def test_empty_log_rejected(tmp_path):
    rd = tmp_path / "empty"
    rd.mkdir()
    (rd / "metrics.jsonl").write_text("\n")
    with pytest.raises(ReportError, match="no epochs"):
        load_history(rd)


def test_report_on_real_run(tiny_result, tmp_path):
    out = tmp_path / "out"
    result = build_report([tiny_result.checkpoint_path.parent], out)
    assert len(result["figures"]) == 2
    md = (out / "report.md").read_text()
    assert "val Dice" in md
