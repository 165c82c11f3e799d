"""Terrain: raster fields, procedural DEM generation, and decoder conditioning features.

Masked (inactive) cells carry quiet NaN in every serialized or derived field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError, MaskedRegionError
from .grid import RasterGrid

SIGMA_FLOOR = 1e-8  # meters; guards standardization of constant DEMs

DEM_STYLES = ("valley", "fractal", "tilted_plane")

# Manning defaults: two-class water/land roughness for generated terrain,
# uniform value for the analytic plane.
MANNING_WATER = 0.02
MANNING_LAND = 0.05
MANNING_UNIFORM = 0.035


@dataclass
class TerrainField:
    """Static world: bed elevation, Manning roughness, active-cell mask."""

    grid: RasterGrid
    b: np.ndarray      # bed elevation [m], shape (ny, nx)
    n: np.ndarray      # Manning coefficient [s m^(-1/3)], shape (ny, nx)
    mask: np.ndarray   # True on active in-domain cells, shape (ny, nx)

    def __post_init__(self):
        shape = self.grid.shape
        for name, arr in (("b", self.b), ("n", self.n), ("mask", self.mask)):
            if arr.shape != shape:
                raise ContractError(f"terrain field '{name}' has shape {arr.shape}, expected {shape}")
        self.b = np.asarray(self.b, dtype=np.float64)
        self.n = np.asarray(self.n, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ConfigurationError("terrain has no active cells")
        if not np.all(np.isfinite(self.b[self.mask])):
            raise ConfigurationError("bed elevation must be finite on active cells")
        if not np.all(self.n[self.mask] > 0.0):
            raise ConfigurationError("Manning coefficient must be positive on active cells")

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class TerrainFeatures:
    """Per-cell static conditioning features for the surrogate decoder."""

    grid: RasterGrid
    b_z: np.ndarray       # standardized elevation, NaN on masked cells
    b_g: np.ndarray       # slope magnitude [m/m], NaN on masked cells
    n_scaled: np.ndarray  # 100 * Manning coefficient, NaN on masked cells
    mu_b: float           # active-cell mean elevation [m]
    sigma_b: float        # active-cell population std of elevation [m]
    mask: np.ndarray = field(repr=False, default=None)

    def stack(self) -> np.ndarray:
        """Features as one (ny, nx, 3) array ordered (b_z, b_g, n_scaled)."""
        return np.stack([self.b_z, self.b_g, self.n_scaled], axis=-1)


def generate_dem(grid: RasterGrid, seed: int, style: str) -> TerrainField:
    """Procedurally generate a terrain field, deterministic in the seed.

    Styles:
      tilted_plane -- analytic plane b = 0.01 * x-offset, uniform Manning.
      valley       -- parabolic cross-valley with downstream tilt plus
                      seeded spectral detail; low-lying channel gets the
                      water Manning class.
      fractal      -- power-law spectral surface; lowest decile gets the
                      water Manning class.
    """
    if style not in DEM_STYLES:
        raise ConfigurationError(f"unknown DEM style '{style}'; expected one of {DEM_STYLES}")
    ny, nx = grid.shape
    mask = np.ones((ny, nx), dtype=bool)

    if style == "tilted_plane":
        i = np.arange(nx, dtype=np.float64)
        b = np.broadcast_to(0.01 * i * grid.dx, (ny, nx)).copy()
        n = np.full((ny, nx), MANNING_UNIFORM)
        return TerrainField(grid=grid, b=b, n=n, mask=mask)

    rng = np.random.default_rng(seed)
    lx = nx * grid.dx
    ly = ny * grid.dx

    if style == "valley":
        x = np.arange(nx, dtype=np.float64) * grid.dx
        y = np.arange(ny, dtype=np.float64) * grid.dx
        xx, yy = np.meshgrid(x, y)
        half_width = 0.5 * ly
        cross = 0.018 * ly * ((yy - 0.5 * ly) / half_width) ** 2
        # steep enough down-valley tilt that the channel drains rather than ponds
        tilt = 0.022 * xx
        detail = _spectral_surface(rng, ny, nx, beta=3.2)
        detail *= 0.0015 * lx / max(_rms(detail), 1e-12)
        b = cross + tilt + detail
    else:  # fractal
        b = _spectral_surface(rng, ny, nx, beta=3.0)
        # scale relief so typical slopes land near real hill terrain (~0.04)
        b *= 0.0022 * lx / max(_rms(b), 1e-12)
    b -= b.min()

    lowest = np.quantile(b, 0.10)
    n = np.where(b <= lowest, MANNING_WATER, MANNING_LAND)
    return TerrainField(grid=grid, b=b, n=n, mask=mask)


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(a * a)))


def _spectral_surface(rng: np.random.Generator, ny: int, nx: int, beta: float) -> np.ndarray:
    """Zero-mean random surface with isotropic power spectrum ~ |k|^-beta."""
    noise = rng.standard_normal((ny, nx))
    spec = np.fft.rfft2(noise)
    ky = np.fft.fftfreq(ny)[:, None]
    kx = np.fft.rfftfreq(nx)[None, :]
    k = np.sqrt(kx * kx + ky * ky)
    k[0, 0] = 1.0
    spec *= k ** (-beta / 2.0)
    spec[0, 0] = 0.0
    surf = np.fft.irfft2(spec, s=(ny, nx))
    return surf - surf.mean()


def mean_slope(terrain: TerrainField) -> float:
    """Mean slope magnitude over active cells (uses the feature gradient)."""
    feats = compute_features(terrain)
    return float(np.nanmean(feats.b_g))


def compute_features(terrain: TerrainField) -> TerrainFeatures:
    """Standardized elevation, slope magnitude, and scaled Manning per cell.

    Statistics are taken over active cells only. Gradients use centered
    differences where both axis neighbors are active, one-sided differences
    at domain/mask edges, and zero where a cell has no active axis neighbor.
    """
    mask = terrain.mask
    b = terrain.b
    active = b[mask]
    mu = float(active.mean())
    sigma = float(active.std())
    b_z = (b - mu) / max(sigma, SIGMA_FLOOR)

    gx = _masked_gradient(b, mask, terrain.grid.dx, axis=1)
    gy = _masked_gradient(b, mask, terrain.grid.dx, axis=0)
    b_g = np.hypot(gx, gy)

    n_scaled = 100.0 * terrain.n

    inactive = ~mask
    for arr in (b_z, b_g, n_scaled):
        arr[inactive] = np.nan
    return TerrainFeatures(grid=terrain.grid, b_z=b_z, b_g=b_g, n_scaled=n_scaled,
                           mu_b=mu, sigma_b=sigma, mask=mask.copy())


def _masked_gradient(b: np.ndarray, mask: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """d(b)/d(axis) honoring the active mask; zero where no neighbor exists."""
    minus_val = np.roll(b, 1, axis=axis)
    plus_val = np.roll(b, -1, axis=axis)
    minus_ok = np.roll(mask, 1, axis=axis)
    plus_ok = np.roll(mask, -1, axis=axis)
    # rolled wrap-around rows/columns are not real neighbors
    edge_lo = [slice(None)] * b.ndim
    edge_lo[axis] = 0
    edge_hi = [slice(None)] * b.ndim
    edge_hi[axis] = -1
    minus_ok[tuple(edge_lo)] = False
    plus_ok[tuple(edge_hi)] = False

    grad = np.zeros_like(b)
    both = minus_ok & plus_ok
    only_plus = plus_ok & ~minus_ok
    only_minus = minus_ok & ~plus_ok
    grad[both] = (plus_val[both] - minus_val[both]) / (2.0 * dx)
    grad[only_plus] = (plus_val[only_plus] - b[only_plus]) / dx
    grad[only_minus] = (b[only_minus] - minus_val[only_minus]) / dx
    return grad


def features_at(features: TerrainFeatures, x, y):
    """Bilinearly interpolate (b_z, b_g, n_scaled) at world coordinates.

    Accepts scalars or equal-length arrays. Weights of masked corner cells are
    dropped and the remainder renormalized; a fully masked neighborhood raises
    MaskedRegionError. A query placed exactly on a cell center returns that
    cell's stored triple bit-for-bit.
    """
    grid = features.grid
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ContractError(f"x and y must have matching shapes, got {x.shape} vs {y.shape}")

    inside = grid.contains(x, y)
    if not np.all(inside):
        bad = np.argwhere(~inside).ravel()[0]
        raise DomainError(
            f"query ({x.ravel()[bad]}, {y.ravel()[bad]}) outside grid bounds {grid.bounds()}")

    fx = _fractional_index(x, grid.origin_x, grid.dx)
    fy = _fractional_index(y, grid.origin_y, grid.dx)
    i0 = np.clip(np.floor(fx).astype(np.int64), 0, grid.nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.int64), 0, grid.ny - 2)
    tx = fx - i0
    ty = fy - j0

    mask = features.mask
    w = np.stack([(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty])
    jj = np.stack([j0, j0, j0 + 1, j0 + 1])
    ii = np.stack([i0, i0 + 1, i0, i0 + 1])
    w = np.where(mask[jj, ii], w, 0.0)
    wsum = w.sum(axis=0)
    if np.any(wsum == 0.0):
        bad = np.argwhere(wsum == 0.0).ravel()[0]
        raise MaskedRegionError(
            f"query ({x.ravel()[bad]}, {y.ravel()[bad]}) has a fully masked 4-cell neighborhood")

    out = []
    for arr in (features.b_z, features.b_g, features.n_scaled):
        corners = arr[jj, ii]
        # NaN on masked corners must not leak through zero weights; the
        # four-term sum is written out so batching cannot reassociate it
        wc = np.where(w > 0.0, w * corners, 0.0)
        vals = (((wc[0] + wc[1]) + wc[2]) + wc[3]) / wsum
        # a corner carrying the full weight is returned untouched (bit-exact)
        exact = w == 1.0
        if exact.any():
            k_idx, n_idx = np.nonzero(exact)
            vals[n_idx] = corners[k_idx, n_idx]
        out.append(vals)

    if scalar:
        return (float(out[0][0]), float(out[1][0]), float(out[2][0]))
    return tuple(out)


def _fractional_index(coord: np.ndarray, origin: float, dx: float) -> np.ndarray:
    """Continuous index along one axis, snapped where coord is bit-equal to a center."""
    f = (coord - origin) / dx
    k = np.rint(f)
    on_center = (origin + k * dx) == coord
    return np.where(on_center, k, f)


# ESRI-ASCII-grid-style text serialization -----------------------------------

DEFAULT_NODATA = -9999.0


def write_ascii_grid(path, grid: RasterGrid, values: np.ndarray, nodata: float = DEFAULT_NODATA) -> None:
    """Write one per-cell field as ESRI ASCII (north row first); NaN -> nodata."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape != grid.shape:
        raise ContractError(f"values shape {vals.shape} does not match grid {grid.shape}")
    lines = [
        f"ncols {grid.nx}",
        f"nrows {grid.ny}",
        f"xllcorner {_fmt(grid.origin_x - 0.5 * grid.dx)}",
        f"yllcorner {_fmt(grid.origin_y - 0.5 * grid.dx)}",
        f"cellsize {_fmt(grid.dx)}",
        f"nodata_value {_fmt(nodata)}",
    ]
    for j in range(grid.ny - 1, -1, -1):
        row = np.where(np.isnan(vals[j]), nodata, vals[j])
        lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ascii_grid(path):
    """Read an ESRI ASCII grid; returns (grid, values, nodata); nodata cells -> NaN."""
    from .errors import FormatError

    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    header = {}
    pos = 0
    expected = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"]
    for key in expected:
        if pos + 1 >= len(tokens) + 1 or tokens[pos].lower() != key:
            raise FormatError(f"expected header key '{key}' in {path}, got '{tokens[pos]}'")
        header[key] = float(tokens[pos + 1])
        pos += 2
    nx = int(header["ncols"])
    ny = int(header["nrows"])
    nodata = header["nodata_value"]
    data = np.array(tokens[pos:], dtype=np.float64)
    if data.size != nx * ny:
        raise FormatError(f"{path}: expected {nx * ny} values, found {data.size}")
    vals = data.reshape(ny, nx)[::-1].copy()  # stored north-first; flip to j=0 south
    vals[vals == nodata] = np.nan
    grid = RasterGrid(nx=nx, ny=ny, dx=header["cellsize"],
                      origin_x=header["xllcorner"] + 0.5 * header["cellsize"],
                      origin_y=header["yllcorner"] + 0.5 * header["cellsize"])
    return grid, vals, nodata


def save_terrain(terrain: TerrainField, dem_path, manning_path) -> None:
    """Write bed and Manning rasters; masked cells become nodata."""
    b = terrain.b.copy()
    n = terrain.n.copy()
    b[~terrain.mask] = np.nan
    n[~terrain.mask] = np.nan
    write_ascii_grid(dem_path, terrain.grid, b)
    write_ascii_grid(manning_path, terrain.grid, n)


def load_terrain(dem_path, manning_path=None, default_n: float = MANNING_UNIFORM) -> TerrainField:
    """Read terrain from ASCII grids; the DEM's nodata cells define the mask."""
    grid, b, _ = read_ascii_grid(dem_path)
    mask = np.isfinite(b)
    if manning_path is not None:
        ngrid, n, _ = read_ascii_grid(manning_path)
        if ngrid.shape != grid.shape:
            raise ConfigurationError(
                f"Manning grid {ngrid.shape} does not match DEM grid {grid.shape}")
    else:
        n = np.full(grid.shape, default_n)
    b = np.where(mask, b, np.nan)
    n = np.where(mask & np.isfinite(n), n, np.where(mask, default_n, np.nan))
    return TerrainField(grid=grid, b=b, n=n, mask=mask)


def _fmt(v: float) -> str:
    """Shortest decimal text that round-trips the float64 exactly."""
    return repr(float(v))
