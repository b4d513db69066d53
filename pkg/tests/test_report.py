import math

import pytest

from report import build_report, load_report, print_summary, save_report, totals


def _layer(name, ratio, skipped=False, pruned=True, params=100, sparsity=0.5):
    return {
        "name": name, "initial_error": 1.0, "final_error": ratio, "skipped": skipped,
        "skip_reason": "update raised layer error" if skipped else None,
        "converged_fraction": 1.0, "iterations_p50": 10, "iterations_p95": 20,
        "sparsity_achieved": sparsity if pruned else 0.0, "parameters": params,
        "degenerate_columns": 0, "pruned": pruned, "ratio": ratio, "ratio_note": None,
    }


def test_totals():
    t = totals([_layer("a", 0.25), _layer("b", 1.0, skipped=True), _layer("c", 1.0, pruned=False)])
    assert t["layers"] == 3
    assert t["pruned_layers"] == 2
    assert t["skipped_layers"] == 1
    assert t["improved_layers"] == 1
    assert t["geomean_ratio"] == pytest.approx(math.sqrt(0.25))
    assert t["sparsity"] == 0.5


def test_totals_with_zero_ratio():
    assert totals([_layer("a", 0.0), _layer("b", 0.5)])["geomean_ratio"] == 0.0


def test_saved_report_loads_from_directory(tmp_path):
    report = build_report([_layer("a", 0.5)], {"update": "qp"})
    save_report(report, tmp_path / "report.json")
    assert load_report(tmp_path) == report


def test_missing_report(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_report(tmp_path)


def test_summary_lists_layers_and_status(capsys):
    print_summary(build_report([_layer("fc1", 0.5), _layer("fc2", 1.0, skipped=True)], {}))
    out = capsys.readouterr().out
    assert "fc1" in out and "updated" in out
    assert "skipped" in out and "update raised layer error" in out
