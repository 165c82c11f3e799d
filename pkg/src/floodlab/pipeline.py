"""End-to-end workflows behind the CLI commands: dataset generation, training,
prediction, evaluation, and benchmarking. Every workflow is deterministic for
a fixed configuration (timing numbers from bench excepted)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_values, parse_kv_lines
from .errors import ConfigurationError, FormatError
from .fld import read_fld, write_fld
from .forcing import (fit_forcing_stats, load_hyetograph_csv,
                      save_hyetograph_csv, synth_ensemble)
from .metrics import MetricReport, compute_report, save_report
from .solver import Trajectory, load_trajectory, save_trajectory, simulate
from .surrogate import (build_model, load_model, predict_at_points,
                        predict_full_grid, save_model)
from .terrain import (TerrainField, compute_features, generate_dem, load_terrain,
                      mean_slope, save_terrain)
from .training import build_wet_union, save_loss_curves, train


@dataclass
class Dataset:
    """Materialized dataset directory: terrain, events, and split indices."""

    root: Path
    terrain: TerrainField
    events: list
    train_ids: list
    val_ids: list
    test_ids: list
    horizon: float
    dt_out: float
    manifest: dict

    @property
    def n_snapshots(self) -> int:
        return int(round(self.horizon / self.dt_out)) + 1

    def trajectory_path(self, event_id: int) -> Path:
        return self.root / "traj" / f"event_{event_id:03d}.fld"

    def load_trajectory(self, event_id: int) -> Trajectory:
        return load_trajectory(self.trajectory_path(event_id), self.terrain,
                               self.dt_out, forcing=self.events[event_id])


def gen_data(config: RunConfig, out_dir) -> Dataset:
    """Generate terrain, a forcing ensemble, and simulated trajectories.

    Writes DEM/Manning ASCII grids, per-event forcing CSVs, FLD1 trajectories,
    and a manifest recording the configuration, seeds, split, and files.
    Re-running with the same configuration recreates every byte identically.
    """
    root = Path(out_dir)
    (root / "terrain").mkdir(parents=True, exist_ok=True)
    (root / "forcing").mkdir(exist_ok=True)
    (root / "traj").mkdir(exist_ok=True)

    grid = config.grid()
    terrain = generate_dem(grid, config["dataset.terrain_seed"], config["dataset.terrain_style"])
    save_terrain(terrain, root / "terrain" / "dem.asc", root / "terrain" / "manning.asc")

    events = synth_ensemble(config["dataset.event_count"], config["dataset.horizon"],
                            config["dataset.dt_force"], config["dataset.forcing_seed"],
                            (config["dataset.intensity_min"], config["dataset.intensity_max"]))
    for k, event in enumerate(events):
        save_hyetograph_csv(root / "forcing" / f"event_{k:03d}.csv", event)

    solver_cfg = config.solver_config()
    horizon = config["dataset.horizon"]
    dt_out = config["dataset.dt_out"]
    for k, event in enumerate(events):
        traj = simulate(terrain, event, solver_cfg, horizon, dt_out)
        save_trajectory(root / "traj" / f"event_{k:03d}.fld", traj)

    n_train = config["dataset.train_count"]
    n_val = config["dataset.val_count"]
    ids = list(range(config["dataset.event_count"]))
    split = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }
    manifest = dict(config.values)
    manifest["terrain.mean_slope"] = mean_slope(terrain)
    lines = [dump_values(manifest).rstrip("\n")]
    for name in ("train", "val", "test"):
        lines.append(f"split.{name} = {','.join(str(i) for i in split[name])}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    return load_dataset(root)


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / "manifest.txt"
    if not manifest_path.exists():
        raise ConfigurationError(f"no manifest.txt under {root}")
    manifest = parse_kv_lines(manifest_path.read_text(encoding="utf-8"), source=str(manifest_path))

    terrain = load_terrain(root / "terrain" / "dem.asc", root / "terrain" / "manning.asc")
    n_events = int(manifest["dataset.event_count"])
    events = [load_hyetograph_csv(root / "forcing" / f"event_{k:03d}.csv")
              for k in range(n_events)]

    def ids(name):
        text = manifest.get(f"split.{name}", "")
        return [int(tok) for tok in text.split(",") if tok.strip()]

    return Dataset(root=root, terrain=terrain, events=events,
                   train_ids=ids("train"), val_ids=ids("val"), test_ids=ids("test"),
                   horizon=float(manifest["dataset.horizon"]),
                   dt_out=float(manifest["dataset.dt_out"]),
                   manifest=manifest)


def run_simulate(config: RunConfig, terrain: TerrainField, forcing, out_path) -> Trajectory:
    traj = simulate(terrain, forcing, config.solver_config(),
                    config["dataset.horizon"], config["dataset.dt_out"])
    save_trajectory(out_path, traj)
    return traj


def run_train(config: RunConfig, dataset: Dataset, checkpoint_path, curves_path=None,
              conditioned: bool | None = None):
    """Fit forcing stats and the wet union on the training split, then train."""
    train_trajs = [dataset.load_trajectory(i) for i in dataset.train_ids]
    val_trajs = [dataset.load_trajectory(i) for i in dataset.val_ids]
    train_forcings = [dataset.events[i] for i in dataset.train_ids]

    stats = fit_forcing_stats(train_forcings, per_cell=config["model.stats_per_cell"])
    if conditioned is None:
        conditioned = config["model.conditioned"]
    model = build_model(
        d_s=config["model.d_s"], m=config["model.m"],
        fourier_scale=config["model.fourier_scale"],
        dyn_depth=config["model.dyn_depth"], dyn_width=config["model.dyn_width"],
        rec_depth=config["model.rec_depth"], rec_width=config["model.rec_width"],
        conditioned=conditioned, forcing_dim=train_forcings[0].forcing_dim,
        dt=dataset.dt_out, forcing_stats=stats, seed=config["model.seed"])

    features = compute_features(dataset.terrain)
    tcfg = config.train_config()
    wet = build_wet_union(train_trajs, dataset.terrain, tcfg.wet_threshold)
    result = train(model, train_trajs, val_trajs, features, wet, tcfg)

    meta = {"model_seed": config["model.seed"], "train_seed": tcfg.seed,
            "epochs": tcfg.epochs, "best_epoch": result.best_epoch,
            "wet_threshold": tcfg.wet_threshold,
            "base_lr": tcfg.base_lr, "final_lr": tcfg.final_lr}
    opt_arrays = {}
    if result.optimizer is not None:
        opt = result.optimizer
        meta["schedule_step"] = opt.step
        meta["total_steps"] = opt.total_steps
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            opt_arrays[f"m{i}"] = m
            opt_arrays[f"v{i}"] = v
    save_model(checkpoint_path, model, meta=meta, optimizer_arrays=opt_arrays)
    if curves_path is not None:
        save_loss_curves(curves_path, result)
    wet_path = Path(checkpoint_path).with_suffix(".wet.fld")
    write_fld(wet_path, wet.cells.astype(np.float64)[None, None],
              mask=dataset.terrain.mask)
    return model, result, wet


def load_points_csv(path) -> np.ndarray:
    """Query points CSV with columns x,y (world meters)."""
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            ln = raw.strip()
            if not ln or ln.startswith("#") or ln.lower().startswith("x"):
                continue
            parts = ln.split(",")
            if len(parts) < 2:
                raise FormatError(f"{path}: need x,y per row")
            pts.append((float(parts[0]), float(parts[1])))
    if not pts:
        raise FormatError(f"{path}: no points found")
    return np.asarray(pts, dtype=np.float64)


def save_point_predictions_csv(path, times, points, values) -> None:
    """Columns t, x, y, h, hu, hv; one row per (snapshot, point)."""
    lines = ["t,x,y,h,hu,hv"]
    for k, t in enumerate(times):
        for p in range(points.shape[0]):
            h, hu, hv = values[k, p]
            lines.append(f"{repr(float(t))},{repr(float(points[p, 0]))},"
                         f"{repr(float(points[p, 1]))},{repr(float(h))},"
                         f"{repr(float(hu))},{repr(float(hv))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run_predict(config: RunConfig, checkpoint_path, dataset: Dataset, event_id: int,
                out_path, points: np.ndarray | None = None, threads: int = 1):
    """Meshless point predictions (CSV) or a full-grid FLD1 raster."""
    model, _, _ = load_model(checkpoint_path)
    features = compute_features(dataset.terrain)
    forcing = dataset.events[event_id]
    n_t = dataset.n_snapshots
    if points is not None:
        values = predict_at_points(model, forcing, features, points, n_t)
        times = np.arange(n_t) * dataset.dt_out
        save_point_predictions_csv(out_path, times, points, values)
        return values
    fields = predict_full_grid(model, forcing, features, n_t, threads=threads)
    write_fld(out_path, fields, mask=dataset.terrain.mask)
    return fields


def evaluation_mask(config: RunConfig, dataset: Dataset) -> np.ndarray:
    """Evaluation cell set: the training wet union or all active cells."""
    if config["evaluation.eval_set"] == "all_active":
        return dataset.terrain.mask
    train_trajs = [dataset.load_trajectory(i) for i in dataset.train_ids]
    wet = build_wet_union(train_trajs, dataset.terrain,
                          config["training.wet_threshold"])
    return wet.cells


def nearest_cell(grid, x: float, y: float) -> tuple[int, int]:
    i = int(np.clip(np.rint((x - grid.origin_x) / grid.dx), 0, grid.nx - 1))
    j = int(np.clip(np.rint((y - grid.origin_y) / grid.dx), 0, grid.ny - 1))
    return j, i


def run_evaluate(config: RunConfig, pred_path, ref_path, dataset: Dataset,
                 report_kv_path, report_text_path=None,
                 gauges: list | None = None, runtime_seconds=None) -> MetricReport:
    """Compare a predicted stack against a reference stack on the eval set.

    gauges: optional list of (name, x, y); depth series are extracted from
    both stacks at the containing cell.
    """
    pred, _ = read_fld(pred_path)
    ref, _ = read_fld(ref_path)
    if pred.shape != ref.shape:
        raise ConfigurationError(
            f"prediction {pred.shape} and reference {ref.shape} shapes differ")
    mask = evaluation_mask(config, dataset)
    pred = np.where(dataset.terrain.mask[None, None], pred, 0.0)
    ref = np.where(dataset.terrain.mask[None, None], ref, 0.0)

    gauge_series = {}
    for name, x, y in (gauges or []):
        j, i = nearest_cell(dataset.terrain.grid, x, y)
        gauge_series[name] = (pred[:, 0, j, i], ref[:, 0, j, i])

    report = compute_report(pred, ref, mask, thresholds=config["evaluation.thresholds"],
                            gauge_series=gauge_series or None,
                            runtime_seconds=runtime_seconds)
    save_report(report_kv_path, report, report_text_path)
    return report


def run_bench(config: RunConfig, checkpoint_path, dataset: Dataset, event_id: int = 0,
              runs: int | None = None) -> dict:
    """Median per-trajectory wall time: reference solver vs surrogate inference."""
    runs = runs or config["bench.runs"]
    model, _, _ = load_model(checkpoint_path)
    features = compute_features(dataset.terrain)
    forcing = dataset.events[event_id]
    solver_cfg = config.solver_config()
    n_t = dataset.n_snapshots

    solver_times = []
    steps = 0
    for _ in range(runs):
        stats = {}
        t0 = time.perf_counter()
        simulate(dataset.terrain, forcing, solver_cfg, dataset.horizon,
                 dataset.dt_out, stats=stats)
        solver_times.append(time.perf_counter() - t0)
        steps = stats["steps"]

    surrogate_times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        predict_full_grid(model, forcing, features, n_t)
        surrogate_times.append(time.perf_counter() - t0)

    solver_median = float(np.median(solver_times))
    surrogate_median = float(np.median(surrogate_times))
    active = int(dataset.terrain.mask.sum())
    return {
        "runs": runs,
        "solver_seconds_per_trajectory": solver_median,
        "surrogate_seconds_per_trajectory": surrogate_median,
        "speedup_ratio": solver_median / surrogate_median,
        "solver_inner_steps": steps,
        "solver_cell_updates_per_second": steps * active / solver_median,
    }


def save_bench_report(path, bench: dict) -> None:
    lines = [f"{key} = {repr(val) if isinstance(val, float) else val}"
             for key, val in bench.items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
