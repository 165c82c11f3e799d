"""Command-line interface: one executable for data generation, simulation,
training, prediction, evaluation, and benchmarking.

All diagnostics go to stderr; data products go to files. Exit code 0 means no
module reported an error. Commands are re-runnable: identical inputs repaint
identical bytes.
"""

from __future__ import annotations

import sys
import click

from . import pipeline
from .config import load_config
from .errors import FloodlabError
from .forcing import load_hyetograph_csv, load_rain_field
from .terrain import load_terrain


def _fail(err: Exception) -> None:
    click.echo(f"error: {err}", err=True)
    sys.exit(1)


def _load(config_path, seed):
    return load_config(config_path, seed_override=seed)


def common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="Run configuration file (section.key = value).")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override every configured seed (derived per block).")(fn)
    fn = click.option("--deterministic", is_flag=True, default=False,
                      help="Force fully serial execution with fixed reduction orders.")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True,
                      help="Worker threads for chunk-parallel decoding.")(fn)
    return fn


@click.group()
def main():
    """Desk-scale shallow-water flood workbench."""


@main.command("gen-data")
@common_options
@click.option("--out", "out_dir", default=None, help="Dataset directory (default: paths.data_dir).")
def cmd_gen_data(config_path, seed, deterministic, threads, out_dir):
    """Generate terrain, forcing ensemble, and simulated trajectories."""
    try:
        cfg = _load(config_path, seed)
        out = out_dir or cfg["paths.data_dir"]
        dataset = pipeline.gen_data(cfg, out)
    except FloodlabError as err:
        _fail(err)
    click.echo(f"wrote {len(dataset.events)} events under {out}", err=True)


@main.command("simulate")
@common_options
@click.option("--dem", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manning", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--forcing", "forcing_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True)
def cmd_simulate(config_path, seed, deterministic, threads, dem, manning,
                 forcing_path, out_path):
    """Run the reference solver on a terrain + forcing pair."""
    try:
        cfg = _load(config_path, seed)
        terrain = load_terrain(dem, manning)
        if str(forcing_path).endswith(".fld"):
            forcing = load_rain_field(forcing_path)
        else:
            forcing = load_hyetograph_csv(forcing_path)
        pipeline.run_simulate(cfg, terrain, forcing, out_path)
    except FloodlabError as err:
        _fail(err)
    click.echo(f"trajectory written to {out_path}", err=True)


@main.command("train")
@common_options
@click.option("--data", "data_dir", default=None, help="Dataset directory.")
@click.option("--out", "model_path", default=None, help="Checkpoint path.")
@click.option("--curves", "curves_path", default=None, help="Loss-curve CSV path.")
@click.option("--unconditioned", is_flag=True, default=False,
              help="Train the terrain-blind ablation instead of the conditioned model.")
def cmd_train(config_path, seed, deterministic, threads, data_dir, model_path,
              curves_path, unconditioned):
    """Train the surrogate on the dataset's training split."""
    try:
        cfg = _load(config_path, seed)
        dataset = pipeline.load_dataset(data_dir or cfg["paths.data_dir"])
        out = model_path or cfg["paths.model_path"]
        conditioned = False if unconditioned else None
        _, result, _ = pipeline.run_train(cfg, dataset, out, curves_path,
                                          conditioned=conditioned)
    except FloodlabError as err:
        _fail(err)
    click.echo(f"trained {result.steps} steps; best val loss "
               f"{result.best_val:.6g} at epoch {result.best_epoch}; "
               f"checkpoint at {out}", err=True)


@main.command("predict")
@common_options
@click.option("--data", "data_dir", default=None)
@click.option("--model", "model_path", default=None)
@click.option("--event", type=int, required=True, help="Dataset event index to force with.")
@click.option("--points", "points_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV of x,y query points for meshless prediction.")
@click.option("--full-grid", "full_grid", is_flag=True, default=False,
              help="Predict on every active cell and write FLD1.")
@click.option("--out", "out_path", required=True)
def cmd_predict(config_path, seed, deterministic, threads, data_dir, model_path,
                event, points_path, full_grid, out_path):
    """Roll the surrogate once and decode at the requested queries."""
    if bool(points_path) == bool(full_grid):
        _fail(FloodlabError("choose exactly one of --points or --full-grid"))
    try:
        cfg = _load(config_path, seed)
        dataset = pipeline.load_dataset(data_dir or cfg["paths.data_dir"])
        model = model_path or cfg["paths.model_path"]
        if event < 0 or event >= len(dataset.events):
            raise FloodlabError(f"event {event} outside 0..{len(dataset.events) - 1}")
        pts = pipeline.load_points_csv(points_path) if points_path else None
        workers = 1 if deterministic else max(1, threads)
        pipeline.run_predict(cfg, model, dataset, event, out_path,
                             points=pts, threads=workers)
    except FloodlabError as err:
        _fail(err)
    click.echo(f"prediction written to {out_path}", err=True)


@main.command("evaluate")
@common_options
@click.option("--data", "data_dir", default=None)
@click.option("--pred", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ref", "ref_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Reference FLD1 stack (default: the --event trajectory).")
@click.option("--event", type=int, default=None,
              help="Dataset event whose trajectory is the reference.")
@click.option("--gauges", "gauges_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV of name,x,y gauge locations for hydrograph metrics.")
@click.option("--out", "report_path", required=True, help="Key-value report path.")
@click.option("--text", "text_path", default=None, help="Human-readable report path.")
def cmd_evaluate(config_path, seed, deterministic, threads, data_dir, pred_path,
                 ref_path, event, gauges_path, report_path, text_path):
    """Score a prediction against a reference trajectory."""
    if (ref_path is None) == (event is None):
        _fail(FloodlabError("choose exactly one of --ref or --event"))
    try:
        cfg = _load(config_path, seed)
        dataset = pipeline.load_dataset(data_dir or cfg["paths.data_dir"])
        ref = ref_path or dataset.trajectory_path(event)
        gauges = _load_gauges(gauges_path) if gauges_path else None
        report = pipeline.run_evaluate(cfg, pred_path, ref, dataset,
                                       report_path, text_path, gauges=gauges)
    except FloodlabError as err:
        _fail(err)
    click.echo(report.to_text(), err=True)


@main.command("bench")
@common_options
@click.option("--data", "data_dir", default=None)
@click.option("--model", "model_path", default=None)
@click.option("--event", type=int, default=0, show_default=True)
@click.option("--runs", type=int, default=None, help="Timing repetitions (default: bench.runs).")
@click.option("--out", "report_path", required=True)
def cmd_bench(config_path, seed, deterministic, threads, data_dir, model_path,
              event, runs, report_path):
    """Time solver vs surrogate per trajectory on the same host."""
    try:
        cfg = _load(config_path, seed)
        dataset = pipeline.load_dataset(data_dir or cfg["paths.data_dir"])
        model = model_path or cfg["paths.model_path"]
        bench = pipeline.run_bench(cfg, model, dataset, event_id=event, runs=runs)
        pipeline.save_bench_report(report_path, bench)
    except FloodlabError as err:
        _fail(err)
    click.echo(f"solver {bench['solver_seconds_per_trajectory']:.3f}s vs surrogate "
               f"{bench['surrogate_seconds_per_trajectory']:.3f}s per trajectory "
               f"(x{bench['speedup_ratio']:.1f})", err=True)


def _load_gauges(path) -> list:
    gauges = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            ln = raw.strip()
            if not ln or ln.startswith("#") or ln.lower().startswith("name"):
                continue
            name, x, y = ln.split(",")[:3]
            gauges.append((name.strip(), float(x), float(y)))
    return gauges


if __name__ == "__main__":
    main()
