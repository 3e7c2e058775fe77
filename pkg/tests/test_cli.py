from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

import pytest

from robust_codesign.cli import run

TINY = Path(__file__).resolve().parents[1] / "configs" / "tiny.json"


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = root / "tiny.json"
    shutil.copy(TINY, cfg)
    code = run(["codesign", "--config", str(cfg), "--out", str(root / "out")])
    assert code == 0
    assert run(["report", "--config", str(cfg), "--out", str(root / "out")]) == 0
    return cfg, root / "out"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_codesign_writes_every_stage(tiny_run):
    _, out = tiny_run
    for stage, names in {"data": ["train.csv", "heldout.csv"],
                         "tune": ["points.csv", "fronts.csv", "pc_star.json"],
                         "subsample": ["subsamples.csv", "importance.csv", "operation.csv"],
                         "cluster": ["clusters.csv", "assignments.csv", "diagnostics.csv", "scaling.json"],
                         "design": ["design.csv", "validation.csv", "augmented.csv"],
                         "report": ["report.csv", "per_subsample.csv"]}.items():
        for n in names:
            assert (out / stage / n).exists(), f"{stage}/{n}"
        assert (out / stage / "stage.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and "cluster" in manifest["stage_seeds"]
    assert (out / "timings.json").exists()


def test_cluster_weights_sum_to_subsamples(tiny_run):
    _, out = tiny_run
    clusters = _rows(out / "cluster" / "clusters.csv")
    subs = _rows(out / "subsample" / "subsamples.csv")
    assert sum(int(r["weight"]) for r in clusters) == len(subs)


def test_rerun_is_a_no_op(tiny_run, capsys):
    cfg, out = tiny_run
    before = {p: p.stat().st_mtime_ns for p in out.rglob("*.csv")}
    assert run(["codesign", "--config", str(cfg), "--out", str(out)]) == 0
    after = {p: p.stat().st_mtime_ns for p in out.rglob("*.csv")}
    assert before == after
    assert "p_star" in capsys.readouterr().out


def test_tampered_artifact_triggers_recompute(tiny_run, tmp_path):
    cfg, out = tiny_run
    copy = tmp_path / "out"
    shutil.copytree(out, copy)
    report = (copy / "report" / "report.csv").read_bytes()
    (copy / "cluster" / "clusters.csv").write_text("garbage\n")
    assert run(["codesign", "--config", str(cfg), "--out", str(copy)]) == 0
    assert run(["report", "--config", str(cfg), "--out", str(copy)]) == 0
    assert (copy / "report" / "report.csv").read_bytes() == report


def test_simulate(tiny_run, capsys):
    cfg, out = tiny_run
    assert run(["simulate", "--config", str(cfg), "--out", str(out), "--p", "10,20", "--span", "24"]) == 0
    assert "total closed-loop cost" in capsys.readouterr().out
    rows = _rows(out / "simulate" / "trajectory.csv")
    assert len(rows) == 24 + 1


def test_usage_and_config_errors(tmp_path, capsys):
    assert run(["codesign"]) == 2
    assert run(["codesign", "--config", str(tmp_path / "missing.json")]) == 2
    assert run(["frobnicate", "--config", str(TINY)]) == 2
    assert run(["simulate", "--config", str(TINY), "--p", "1"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"controller": {"delta_T": -1}}))
    assert run(["tune", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_artifact_and_compute_failure(tmp_path):
    cfg = tmp_path / "tiny.json"
    shutil.copy(TINY, cfg)
    out = tmp_path / "fresh"
    assert run(["cluster", "--config", str(cfg), "--out", str(out)]) == 2
    assert run(["simulate", "--config", str(cfg), "--out", str(out), "--p", "61,0"]) == 2
    # simulating beyond the data fails inside the solver loop
    assert run(["simulate", "--config", str(cfg), "--out", str(out), "--p", "0,0", "--span", "500"]) == 3


def test_flag_overrides(tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    shutil.copy(TINY, cfg)
    out = tmp_path / "o"
    assert run(["tune", "--config", str(cfg), "--out", str(out), "--pc", "1,2,4"]) == 0
    assert json.loads((out / "tune" / "pc_star.json").read_text())["pc_star"] == [1, 2, 4]
    assert run(["subsample", "--config", str(cfg), "--out", str(out), "--pc", "1,2,4"]) == 0
    assert run(["cluster", "--config", str(cfg), "--out", str(out), "--pc", "1,2,4", "--n-c", "2"]) == 0
    assert "n_c = 2" in capsys.readouterr().out


def test_artifacts_round_trip(tiny_run):
    from robust_codesign.pipeline import design_reports, load_clusters
    from robust_codesign.timeseries import load_series, save_series

    _, out = tiny_run
    for name in ("train", "heldout"):
        s = load_series(out / "data" / f"{name}.csv", 15)
        save_series(s, out / f"{name}.copy.csv")
        assert (out / f"{name}.copy.csv").read_bytes() == (out / "data" / f"{name}.csv").read_bytes()
        (out / f"{name}.copy.csv").unlink()
    cm = load_clusters(out / "cluster")
    cm.check()
    assert design_reports(out / "design" / "design.csv")[0].p_star.battery_units >= 0
    for f in out.rglob("*.csv"):
        header = f.read_text().splitlines()[0]
        assert header and not header[0].isdigit(), f
