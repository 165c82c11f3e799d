"""End-to-end CLI runs on a miniature dataset: gen-data, train, predict,
evaluate, bench, plus re-run determinism."""

import hashlib
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from floodlab.cli import main
from floodlab.fld import read_fld
from floodlab.pipeline import load_dataset

TINY_CONFIG = """
# miniature end-to-end configuration
dataset.grid_nx = 16
dataset.grid_ny = 16
dataset.dx = 30.0
dataset.terrain_style = valley
dataset.terrain_seed = 7
dataset.event_count = 4
dataset.train_count = 2
dataset.val_count = 0
dataset.test_count = 2
dataset.horizon = 7200
dataset.dt_out = 3600
dataset.dt_force = 3600
dataset.intensity_max = 2e-5
dataset.forcing_seed = 11
solver.boundary = closed
model.d_s = 4
model.m = 3
model.dyn_depth = 1
model.dyn_width = 6
model.rec_depth = 1
model.rec_width = 8
training.points_per_step = 8
training.epochs = 3
training.wet_threshold = 0.005
evaluation.thresholds = 0.01
bench.runs = 2
"""


def dir_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated dataset + trained checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CONFIG)
    runner = CliRunner()
    data = root / "data"
    res = runner.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(data)])
    assert res.exit_code == 0, res.output
    model = root / "model.nnb"
    res = runner.invoke(main, ["train", "--config", str(cfg), "--data", str(data),
                               "--out", str(model), "--curves", str(root / "curves.csv"),
                               "--deterministic"])
    assert res.exit_code == 0, res.output
    return {"root": root, "cfg": cfg, "data": data, "model": model, "runner": runner}


class TestGenData:
    def test_outputs_exist(self, workspace):
        data = workspace["data"]
        assert (data / "manifest.txt").exists()
        assert (data / "terrain" / "dem.asc").exists()
        assert len(list((data / "traj").glob("*.fld"))) == 4
        assert len(list((data / "forcing").glob("*.csv"))) == 4

    def test_second_event_reverses_first(self, workspace):
        dataset = load_dataset(workspace["data"])
        np.testing.assert_array_equal(dataset.events[1].rates,
                                      dataset.events[0].rates[::-1])

    def test_split_recorded(self, workspace):
        dataset = load_dataset(workspace["data"])
        assert dataset.train_ids == [0, 1]
        assert dataset.test_ids == [2, 3]

    def test_rerun_byte_identical(self, workspace, tmp_path):
        runner = workspace["runner"]
        out = tmp_path / "data2"
        res = runner.invoke(main, ["gen-data", "--config", str(workspace["cfg"]),
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert dir_digest(out) == dir_digest(workspace["data"])


class TestTrain:
    def test_checkpoint_and_curves(self, workspace):
        assert workspace["model"].exists()
        curves = (workspace["root"] / "curves.csv").read_text().splitlines()
        assert curves[0] == "epoch,train_loss,val_loss"
        assert len(curves) == 4  # header + 3 epochs

    def test_wet_union_artifact(self, workspace):
        wet_path = workspace["model"].with_suffix(".wet.fld")
        data, mask = read_fld(wet_path)
        assert data.shape[0] == 1 and data.shape[1] == 1
        assert np.nansum(data) > 0

    def test_retrain_byte_identical(self, workspace, tmp_path):
        runner = workspace["runner"]
        out = tmp_path / "model2.nnb"
        res = runner.invoke(main, ["train", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--out", str(out), "--deterministic"])
        assert res.exit_code == 0, res.output
        assert out.read_bytes() == workspace["model"].read_bytes()


class TestPredict:
    def test_full_grid(self, workspace, tmp_path):
        runner = workspace["runner"]
        out = tmp_path / "pred.fld"
        res = runner.invoke(main, ["predict", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--model", str(workspace["model"]),
                                   "--event", "2", "--full-grid", "--out", str(out)])
        assert res.exit_code == 0, res.output
        data, mask = read_fld(out)
        assert data.shape == (3, 3, 16, 16)

    def test_point_query_matches_full_grid(self, workspace, tmp_path):
        runner = workspace["runner"]
        full_path = tmp_path / "full.fld"
        runner.invoke(main, ["predict", "--config", str(workspace["cfg"]),
                             "--data", str(workspace["data"]),
                             "--model", str(workspace["model"]),
                             "--event", "2", "--full-grid", "--out", str(full_path)])
        pts = tmp_path / "points.csv"
        # cell centers (5, 3) and (10, 12): x = i*dx, y = j*dx
        pts.write_text("x,y\n150.0,90.0\n300.0,360.0\n")
        out = tmp_path / "points_out.csv"
        res = runner.invoke(main, ["predict", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--model", str(workspace["model"]),
                                   "--event", "2", "--points", str(pts),
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        full, _ = read_fld(full_path)
        rows = out.read_text().splitlines()[1:]
        for row in rows:
            t, x, y, h, hu, hv = (float(tok) for tok in row.split(","))
            k = int(t // 3600)
            i, j = int(x // 30), int(y // 30)
            assert h == full[k, 0, j, i]
            assert hu == full[k, 1, j, i]
            assert hv == full[k, 2, j, i]

    def test_requires_exactly_one_mode(self, workspace, tmp_path):
        runner = workspace["runner"]
        res = runner.invoke(main, ["predict", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--model", str(workspace["model"]),
                                   "--event", "0", "--out", str(tmp_path / "x.fld")])
        assert res.exit_code == 1

    def test_bad_event_rejected(self, workspace, tmp_path):
        runner = workspace["runner"]
        res = runner.invoke(main, ["predict", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--model", str(workspace["model"]),
                                   "--event", "99", "--full-grid",
                                   "--out", str(tmp_path / "x.fld")])
        assert res.exit_code == 1


class TestEvaluate:
    def test_self_evaluation_perfect(self, workspace, tmp_path):
        runner = workspace["runner"]
        dataset = load_dataset(workspace["data"])
        ref = dataset.trajectory_path(2)
        report = tmp_path / "report.kv"
        res = runner.invoke(main, ["evaluate", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--pred", str(ref), "--event", "2",
                                   "--out", str(report)])
        assert res.exit_code == 0, res.output
        text = report.read_text()
        assert "rrmse.all_pooled = 0.0" in text
        assert "extent.tau_0.01.csi = 100.0" in text

    def test_prediction_evaluation_and_determinism(self, workspace, tmp_path):
        runner = workspace["runner"]
        pred = tmp_path / "pred.fld"
        runner.invoke(main, ["predict", "--config", str(workspace["cfg"]),
                             "--data", str(workspace["data"]),
                             "--model", str(workspace["model"]),
                             "--event", "3", "--full-grid", "--out", str(pred)])
        reports = []
        for name in ("r1.kv", "r2.kv"):
            path = tmp_path / name
            res = runner.invoke(main, ["evaluate", "--config", str(workspace["cfg"]),
                                       "--data", str(workspace["data"]),
                                       "--pred", str(pred), "--event", "3",
                                       "--out", str(path), "--text",
                                       str(path.with_suffix(".txt"))])
            assert res.exit_code == 0, res.output
            reports.append(path.read_bytes())
        assert reports[0] == reports[1]

    def test_gauges(self, workspace, tmp_path):
        runner = workspace["runner"]
        dataset = load_dataset(workspace["data"])
        gauges = tmp_path / "gauges.csv"
        gauges.write_text("name,x,y\ncenter,240.0,240.0\n")
        report = tmp_path / "g.kv"
        res = runner.invoke(main, ["evaluate", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--pred", str(dataset.trajectory_path(2)),
                                   "--event", "2", "--gauges", str(gauges),
                                   "--out", str(report)])
        assert res.exit_code == 0, res.output
        assert "gauge.center.nse" in report.read_text()

    def test_mode_exclusivity(self, workspace, tmp_path):
        runner = workspace["runner"]
        dataset = load_dataset(workspace["data"])
        res = runner.invoke(main, ["evaluate", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--pred", str(dataset.trajectory_path(2)),
                                   "--out", str(tmp_path / "x.kv")])
        assert res.exit_code == 1


class TestBench:
    def test_bench_report(self, workspace, tmp_path):
        runner = workspace["runner"]
        report = tmp_path / "bench.txt"
        res = runner.invoke(main, ["bench", "--config", str(workspace["cfg"]),
                                   "--data", str(workspace["data"]),
                                   "--model", str(workspace["model"]),
                                   "--event", "0", "--runs", "2",
                                   "--out", str(report)])
        assert res.exit_code == 0, res.output
        text = report.read_text()
        assert "solver_seconds_per_trajectory" in text
        assert "speedup_ratio" in text
        assert "solver_cell_updates_per_second" in text


class TestSimulateCommand:
    def test_simulate_from_files(self, workspace, tmp_path):
        runner = workspace["runner"]
        data = workspace["data"]
        out = tmp_path / "sim.fld"
        res = runner.invoke(main, ["simulate", "--config", str(workspace["cfg"]),
                                   "--dem", str(data / "terrain" / "dem.asc"),
                                   "--manning", str(data / "terrain" / "manning.asc"),
                                   "--forcing", str(data / "forcing" / "event_000.csv"),
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        # identical inputs reproduce the dataset trajectory byte-for-byte
        assert out.read_bytes() == (data / "traj" / "event_000.fld").read_bytes()

    def test_unknown_config_key_fails(self, workspace, tmp_path):
        runner = workspace["runner"]
        bad = tmp_path / "bad.cfg"
        bad.write_text(TINY_CONFIG + "\nsolver.warp = 9\n")
        res = runner.invoke(main, ["gen-data", "--config", str(bad),
                                   "--out", str(tmp_path / "d")])
        assert res.exit_code == 1
        assert "unknown configuration key" in res.output
