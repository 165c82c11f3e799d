"""Rainfall forcing: synthetic hyetograph ensembles, coarse rain fields, and
forcing standardization statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError
from .grid import RasterGrid

STD_FLOOR = 1e-12  # guards standardization of all-zero forcing ensembles


@dataclass(frozen=True)
class Hyetograph:
    """Spatially uniform rainfall: one rate [m/s] per forcing interval."""

    rates: np.ndarray
    dt_force: float

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=np.float64))
        if self.rates.ndim != 1 or self.rates.size < 1:
            raise ConfigurationError("hyetograph needs at least one rate")
        if np.any(self.rates < 0.0) or not np.all(np.isfinite(self.rates)):
            raise ConfigurationError("rainfall rates must be finite and nonnegative")
        if not self.dt_force > 0.0:
            raise ConfigurationError("forcing interval must be positive")

    @property
    def duration(self) -> float:
        return self.rates.size * self.dt_force

    @property
    def n_intervals(self) -> int:
        return self.rates.size

    def rate_at_interval(self, idx: int) -> float:
        """Rate of interval idx; beyond the recorded intervals rainfall is zero."""
        if idx < 0:
            raise DomainError(f"negative forcing interval {idx}")
        return float(self.rates[idx]) if idx < self.rates.size else 0.0

    def rate_on_grid(self, idx: int, grid: RasterGrid) -> float:
        """Uniform rate for interval idx; scalar broadcasts over the grid."""
        return self.rate_at_interval(idx)

    def total_depth(self) -> float:
        """Accumulated rainfall depth [m] over the full record.

        Uses an exactly rounded sum so the depth is invariant under any
        permutation of the rates (a reversed copy reports the same depth).
        """
        import math

        return math.fsum(self.rates) * self.dt_force

    def reversed(self) -> "Hyetograph":
        return Hyetograph(rates=self.rates[::-1].copy(), dt_force=self.dt_force)

    def forcing_vector(self, t: float) -> np.ndarray:
        """Forcing input for the surrogate dynamics at time t (1-vector)."""
        idx = min(int(np.floor(t / self.dt_force)), self.rates.size - 1)
        return np.array([self.rates[max(idx, 0)]])

    @property
    def forcing_dim(self) -> int:
        return 1


@dataclass(frozen=True)
class RainField:
    """Spatially heterogeneous rainfall on a coarse grid.

    frames has shape (n_frames, ny_c, nx_c); extent is the covered world
    rectangle (x0, y0, x1, y1) in meters.
    """

    frames: np.ndarray
    dt_force: float
    extent: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "frames", np.asarray(self.frames, dtype=np.float64))
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ConfigurationError("rain field needs frames shaped (n_frames, ny_c, nx_c)")
        if np.any(self.frames < 0.0) or not np.all(np.isfinite(self.frames)):
            raise ConfigurationError("rainfall rates must be finite and nonnegative")
        if not self.dt_force > 0.0:
            raise ConfigurationError("forcing interval must be positive")
        x0, y0, x1, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ConfigurationError(f"degenerate rain-field extent {self.extent}")

    @property
    def nx_c(self) -> int:
        return self.frames.shape[2]

    @property
    def ny_c(self) -> int:
        return self.frames.shape[1]

    @property
    def n_intervals(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.n_intervals * self.dt_force

    def frame_at_interval(self, idx: int) -> np.ndarray:
        if idx < 0:
            raise DomainError(f"negative forcing interval {idx}")
        if idx < self.n_intervals:
            return self.frames[idx]
        return np.zeros((self.ny_c, self.nx_c))

    def rate_on_grid(self, idx: int, grid: RasterGrid) -> np.ndarray:
        return resample_to_grid(self, idx, grid)

    def total_depth_field(self, grid: RasterGrid) -> np.ndarray:
        """Accumulated depth [m] per fine cell over the full record."""
        out = np.zeros(grid.shape)
        for k in range(self.n_intervals):
            out += self.rate_on_grid(k, grid) * self.dt_force
        return out

    def forcing_vector(self, t: float) -> np.ndarray:
        """Flattened coarse frame active at time t."""
        idx = min(int(np.floor(t / self.dt_force)), self.n_intervals - 1)
        return self.frames[max(idx, 0)].reshape(-1).copy()

    @property
    def forcing_dim(self) -> int:
        return self.ny_c * self.nx_c


def synth_ensemble(count: int, duration: float, dt_force: float, seed: int,
                   intensity_range: tuple[float, float]) -> list[Hyetograph]:
    """Generate count pulse-shaped hyetographs, half of them exact time
    reversals of the other half (adjacent pairs: [e0, reversed(e0), e1, ...]).
    """
    if count % 2 != 0 or count <= 0:
        raise ConfigurationError(f"ensemble count must be a positive even number, got {count}")
    lo, hi = intensity_range
    if lo < 0.0 or hi < lo:
        raise ConfigurationError(f"invalid intensity range {intensity_range}")
    n_steps = max(int(round(duration / dt_force)), 1)
    rng = np.random.default_rng(seed)
    t_mid = (np.arange(n_steps) + 0.5) * dt_force

    events: list[Hyetograph] = []
    for _ in range(count // 2):
        shape = np.zeros(n_steps)
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(0.15, 0.85) * duration
            half_width = rng.uniform(0.08, 0.35) * duration
            amp = rng.uniform(0.3, 1.0)
            shape += amp * np.maximum(0.0, 1.0 - np.abs(t_mid - center) / half_width)
        if shape.max() == 0.0:
            # narrow pulses can fall between coarse sample points; guarantee
            # a storm by spanning the record with one broad triangle
            shape = np.maximum(0.0, 1.0 - np.abs(t_mid - 0.5 * duration) / (0.5 * duration))
        peak = rng.uniform(lo, hi)
        rates = shape * (peak / shape.max())
        event = Hyetograph(rates=rates, dt_force=dt_force)
        events.append(event)
        events.append(event.reversed())
    return events


def resample_to_grid(field: RainField, frame: int, grid: RasterGrid) -> np.ndarray:
    """Piecewise-constant (nearest coarse pixel) rates on the fine grid.

    Each fine cell center is assigned the rate of the coarse pixel containing
    it, so the coarse pixel's rained volume over its covered area is preserved
    exactly (no smoothing).
    """
    x0, y0, x1, y1 = field.extent
    gx0, gy0, gx1, gy1 = grid.bounds()
    if gx0 < x0 or gy0 < y0 or gx1 > x1 or gy1 > y1:
        raise DomainError(
            f"grid bounds {grid.bounds()} extend past rain-field extent {field.extent}")
    rates = field.frame_at_interval(frame)
    dxc = (x1 - x0) / field.nx_c
    dyc = (y1 - y0) / field.ny_c
    ci = np.clip(((grid.x_centers() - x0) / dxc).astype(np.int64), 0, field.nx_c - 1)
    cj = np.clip(((grid.y_centers() - y0) / dyc).astype(np.int64), 0, field.ny_c - 1)
    return rates[np.ix_(cj, ci)].copy()


@dataclass(frozen=True)
class ForcingStats:
    """Training-split rainfall moments; immutable after fitting.

    mean/std are scalars in global mode, or per-coarse-cell arrays in
    per-cell mode (flattened frame layout).
    """

    mean: np.ndarray
    std: np.ndarray
    per_cell: bool = False

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64)).copy()
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64)).copy()
        if np.any(std < STD_FLOOR):
            std = np.maximum(std, STD_FLOOR)
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def fit_forcing_stats(training_forcings, per_cell: bool = False) -> ForcingStats:
    """Fit rainfall mean/std from the training split only.

    Scalar hyetographs always produce global stats; rain fields produce global
    stats by default or per-coarse-cell stats when per_cell is set.
    """
    if not training_forcings:
        raise ConfigurationError("cannot fit forcing stats on an empty training split")
    samples = []
    for f in training_forcings:
        if isinstance(f, Hyetograph):
            samples.append(f.rates.reshape(-1, 1))
        elif isinstance(f, RainField):
            samples.append(f.frames.reshape(f.n_intervals, -1))
        else:
            raise ContractError(f"unsupported forcing type {type(f).__name__}")
    stacked = np.concatenate(samples, axis=0)
    if per_cell and stacked.shape[1] > 1:
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        return ForcingStats(mean=mean, std=std, per_cell=True)
    mean = np.array([stacked.mean()])
    std = np.array([stacked.std()])
    return ForcingStats(mean=mean, std=std, per_cell=False)


def standardize(values, stats: ForcingStats) -> np.ndarray:
    """(x - mean) / max(std, floor); shape-preserving."""
    x = np.asarray(values, dtype=np.float64)
    return (x - _broadcast(stats.mean, x)) / _broadcast(stats.std, x)


def unstandardize(values, stats: ForcingStats) -> np.ndarray:
    """Exact inverse of standardize (round-trip within 1e-12)."""
    x = np.asarray(values, dtype=np.float64)
    return x * _broadcast(stats.std, x) + _broadcast(stats.mean, x)


def _broadcast(stat: np.ndarray, like: np.ndarray) -> np.ndarray:
    if stat.size == 1:
        return stat.reshape(())
    if like.ndim >= 1 and like.shape[-1] == stat.size:
        return stat
    raise ContractError(
        f"per-cell stats of size {stat.size} cannot broadcast to shape {like.shape}")


# Serialization ----------------------------------------------------------------

def save_rain_field(path, field: RainField) -> None:
    """Spatial rain stack as FLD1 (frames time-major, n_vars = 1) plus a
    `<path>.meta` key=value sidecar carrying dt_force and the world extent."""
    from .fld import write_fld

    write_fld(path, field.frames[:, None, :, :])
    x0, y0, x1, y1 = field.extent
    meta = (f"dt_force = {repr(float(field.dt_force))}\n"
            f"extent = {repr(float(x0))},{repr(float(y0))},"
            f"{repr(float(x1))},{repr(float(y1))}\n")
    with open(str(path) + ".meta", "w", encoding="utf-8") as fh:
        fh.write(meta)


def load_rain_field(path) -> RainField:
    from .errors import FormatError
    from .fld import read_fld

    data, _ = read_fld(path)
    if data.shape[1] != 1:
        raise FormatError(f"{path}: rain stacks carry exactly one variable")
    meta_path = str(path) + ".meta"
    dt_force = None
    extent = None
    with open(meta_path, "r", encoding="utf-8") as fh:
        for raw in fh:
            ln = raw.strip()
            if ln.startswith("dt_force"):
                dt_force = float(ln.split("=")[1])
            elif ln.startswith("extent"):
                extent = tuple(float(tok) for tok in ln.split("=")[1].split(","))
    if dt_force is None or extent is None or len(extent) != 4:
        raise FormatError(f"{meta_path}: needs dt_force and a 4-value extent")
    return RainField(frames=data[:, 0], dt_force=dt_force, extent=extent)


def save_hyetograph_csv(path, hyet: Hyetograph) -> None:
    """Columns: interval start time [s], rate [m/s]; dt kept in a comment line."""
    lines = [f"# dt_force={repr(float(hyet.dt_force))}", "t,rate"]
    for k, r in enumerate(hyet.rates):
        lines.append(f"{repr(k * hyet.dt_force)},{repr(float(r))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_hyetograph_csv(path) -> Hyetograph:
    from .errors import FormatError

    dt = None
    times, rates = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            ln = raw.strip()
            if not ln:
                continue
            if ln.startswith("#"):
                if "dt_force=" in ln:
                    dt = float(ln.split("dt_force=")[1])
                continue
            if ln.lower() == "t,rate":
                continue
            t_str, r_str = ln.split(",")
            times.append(float(t_str))
            rates.append(float(r_str))
    if not rates:
        raise FormatError(f"{path}: no rainfall rows found")
    if dt is None:
        if len(times) < 2:
            raise FormatError(f"{path}: cannot infer forcing interval from a single row")
        dt = times[1] - times[0]
    return Hyetograph(rates=np.array(rates), dt_force=dt)
