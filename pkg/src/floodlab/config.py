"""Run configuration: `section.key = value` text format with typed validation.

Unknown keys are rejected; every value is checked against the schema before
any work starts. `#` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .solver import SolverConfig
from .training import TrainConfig


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: '{s}'")


def _parse_floats(s: str):
    return tuple(float(tok) for tok in s.split(",") if tok.strip())


_TYPES = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "floats": _parse_floats,
}

# key -> (type name, default); REQUIRED means the key must appear
REQUIRED = object()

SCHEMA = {
    "dataset.grid_nx": ("int", 64),
    "dataset.grid_ny": ("int", 64),
    "dataset.dx": ("float", 30.0),
    "dataset.origin_x": ("float", 0.0),
    "dataset.origin_y": ("float", 0.0),
    "dataset.terrain_style": ("str", "valley"),
    "dataset.terrain_seed": ("int", 7),
    "dataset.event_count": ("int", 36),
    "dataset.train_count": ("int", 30),
    "dataset.val_count": ("int", 0),
    "dataset.test_count": ("int", 6),
    "dataset.horizon": ("float", 82800.0),
    "dataset.dt_out": ("float", 3600.0),
    "dataset.dt_force": ("float", 3600.0),
    "dataset.intensity_min": ("float", 0.0),
    "dataset.intensity_max": ("float", 2.5e-5),
    "dataset.forcing_seed": ("int", 11),
    "solver.g": ("float", 9.81),
    "solver.cfl": ("float", 0.45),
    "solver.h_min": ("float", 1e-10),
    "solver.boundary": ("str", "open"),
    "solver.max_dt": ("float", None),      # defaults to dataset.dt_out
    "solver.min_dt": ("float", 1e-6),
    "model.d_s": ("int", 16),
    "model.m": ("int", 8),
    "model.fourier_scale": ("float", 1.0),
    "model.dyn_depth": ("int", 4),
    "model.dyn_width": ("int", 32),
    "model.rec_depth": ("int", 5),
    "model.rec_width": ("int", 64),
    "model.conditioned": ("bool", True),
    "model.seed": ("int", 3),
    "model.stats_per_cell": ("bool", False),
    "training.points_per_step": ("int", 256),
    "training.epochs": ("int", 400),
    "training.seed": ("int", 5),
    "training.shard_count": ("int", 1),
    "training.base_lr": ("float", 1e-3),
    "training.final_lr": ("float", 1e-6),
    "training.clip_norm": ("float", 1.0),
    "training.wet_threshold": ("float", 0.1),
    "evaluation.thresholds": ("floats", (0.1, 0.5)),
    "evaluation.eval_set": ("str", "wet_union"),
    "bench.runs": ("int", 5),
    "paths.data_dir": ("str", "data"),
    "paths.model_path": ("str", "model.nnb"),
    "paths.out_dir": ("str", "out"),
}

_SEED_KEYS = ("dataset.terrain_seed", "dataset.forcing_seed", "model.seed", "training.seed")

_ENUMS = {
    "dataset.terrain_style": ("valley", "fractal", "tilted_plane"),
    "solver.boundary": ("open", "closed"),
    "evaluation.eval_set": ("wet_union", "all_active"),
}


def parse_kv_lines(text: str, source: str = "<config>") -> dict:
    """Parse `key = value` lines into a raw string dict; rejects malformed lines."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got '{stripped}'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key '{key}'")
        raw[key] = value.strip()
    return raw


@dataclass
class RunConfig:
    """Validated configuration for every CLI command."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def grid(self):
        from .grid import RasterGrid

        return RasterGrid(nx=self["dataset.grid_nx"], ny=self["dataset.grid_ny"],
                          dx=self["dataset.dx"], origin_x=self["dataset.origin_x"],
                          origin_y=self["dataset.origin_y"])

    def solver_config(self) -> SolverConfig:
        max_dt = self["solver.max_dt"]
        if max_dt is None:
            max_dt = self["dataset.dt_out"]
        return SolverConfig(g=self["solver.g"], cfl=self["solver.cfl"],
                            h_min=self["solver.h_min"], max_dt=max_dt,
                            min_dt=self["solver.min_dt"], boundary=self["solver.boundary"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(points_per_step=self["training.points_per_step"],
                           epochs=self["training.epochs"], seed=self["training.seed"],
                           shard_count=self["training.shard_count"],
                           base_lr=self["training.base_lr"], final_lr=self["training.final_lr"],
                           clip_norm=self["training.clip_norm"],
                           wet_threshold=self["training.wet_threshold"])

    @property
    def n_snapshots(self) -> int:
        return int(round(self["dataset.horizon"] / self["dataset.dt_out"])) + 1


def load_config(path, seed_override: int | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return config_from_text(text, source=str(path), seed_override=seed_override)


def config_from_text(text: str, source: str = "<config>",
                     seed_override: int | None = None) -> RunConfig:
    raw = parse_kv_lines(text, source=source)
    values = {}
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigurationError(f"{source}: unknown configuration key '{key}'")
        type_name, _ = SCHEMA[key]
        try:
            values[key] = _TYPES[type_name](value)
        except ValueError as err:
            raise ConfigurationError(f"{source}: bad value for '{key}': {err}") from err
    for key, (_, default) in SCHEMA.items():
        values.setdefault(key, default)
    if seed_override is not None:
        for offset, key in enumerate(_SEED_KEYS):
            values[key] = seed_override + offset
    _validate(values, source)
    return RunConfig(values=values)


def _validate(values: dict, source: str) -> None:
    for key, options in _ENUMS.items():
        if values[key] not in options:
            raise ConfigurationError(
                f"{source}: '{key}' must be one of {options}, got '{values[key]}'")
    d = values
    if d["dataset.event_count"] % 2 != 0 or d["dataset.event_count"] <= 0:
        raise ConfigurationError(f"{source}: dataset.event_count must be positive and even")
    total = d["dataset.train_count"] + d["dataset.val_count"] + d["dataset.test_count"]
    if total != d["dataset.event_count"]:
        raise ConfigurationError(
            f"{source}: split sizes sum to {total}, expected event_count "
            f"{d['dataset.event_count']}")
    if d["dataset.train_count"] < 1 or d["dataset.test_count"] < 0 or d["dataset.val_count"] < 0:
        raise ConfigurationError(f"{source}: invalid split sizes")
    n_out = d["dataset.horizon"] / d["dataset.dt_out"]
    if abs(n_out - round(n_out)) > 1e-9 or round(n_out) < 1:
        raise ConfigurationError(
            f"{source}: dataset.horizon must be a positive integer multiple of dataset.dt_out")
    if d["dataset.intensity_min"] < 0 or d["dataset.intensity_max"] < d["dataset.intensity_min"]:
        raise ConfigurationError(f"{source}: invalid intensity range")
    for key in ("dataset.dt_out", "dataset.dt_force", "dataset.dx"):
        if not d[key] > 0:
            raise ConfigurationError(f"{source}: '{key}' must be positive")
    for key in ("model.d_s", "model.m", "model.dyn_depth", "model.dyn_width",
                "model.rec_depth", "model.rec_width", "bench.runs"):
        if d[key] < 1:
            raise ConfigurationError(f"{source}: '{key}' must be >= 1")
    if not np.isfinite(d["dataset.horizon"]) or d["dataset.horizon"] <= 0:
        raise ConfigurationError(f"{source}: dataset.horizon must be positive and finite")


def dump_values(values: dict) -> str:
    """Serialize a value dict back to the text format, deterministically."""
    lines = []
    for key in sorted(values):
        val = values[key]
        if val is None:
            continue
        if isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, tuple):
            text = ",".join(repr(float(v)) for v in val)
        elif isinstance(val, float):
            text = repr(val)
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
