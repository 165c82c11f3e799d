"""Latent-dynamics flood surrogate: forward-Euler latent rollout driven by
standardized rainfall and a meshless coordinate decoder, optionally
conditioned on static terrain features (CLDNet) or not (LDNet ablation).

The latent Euler step advances in units of hours (model.dt is stored in
seconds and divided by 3600), keeping increments well scaled for tanh MLPs
with hourly snapshots.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, NumericError
from .fld import read_blob, write_blob
from .forcing import ForcingStats, standardize
from .neural import MLP, FourierEmbedding, mlp_forward
from .terrain import TerrainFeatures, features_at

LATENT_TIME_SCALE = 3600.0  # seconds per latent time unit
DEFAULT_CHUNK = 4096


@dataclass
class CLDNetModel:
    """Dynamics MLP + reconstruction MLP + Fourier embedding + conditioning switch."""

    dyn: MLP
    rec: MLP
    embedding: FourierEmbedding
    d_s: int
    dt: float                 # snapshot interval [s]
    conditioned: bool
    forcing_stats: ForcingStats
    forcing_dim: int

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigurationError(f"snapshot interval must be positive, got {self.dt}")
        expect_dyn_in = self.d_s + self.forcing_dim
        if self.dyn.input_dim != expect_dyn_in or self.dyn.output_dim != self.d_s:
            raise ContractError(
                f"dynamics net must map {expect_dyn_in} -> {self.d_s}, "
                f"got {self.dyn.input_dim} -> {self.dyn.output_dim}")
        expect_rec_in = self.d_s + self.embedding.output_dim + (3 if self.conditioned else 0)
        if self.rec.input_dim != expect_rec_in or self.rec.output_dim != 3:
            raise ContractError(
                f"reconstruction net must map {expect_rec_in} -> 3, "
                f"got {self.rec.input_dim} -> {self.rec.output_dim}")

    @property
    def kind(self) -> str:
        return "cldnet" if self.conditioned else "ldnet"

    @property
    def dt_latent(self) -> float:
        return self.dt / LATENT_TIME_SCALE

    def n_parameters(self) -> int:
        return self.dyn.n_parameters() + self.rec.n_parameters()


def build_model(d_s: int = 16, m: int = 8, fourier_scale: float = 1.0,
                dyn_depth: int = 4, dyn_width: int = 32,
                rec_depth: int = 5, rec_width: int = 64,
                conditioned: bool = True, forcing_dim: int = 1,
                dt: float = 3600.0, forcing_stats: ForcingStats | None = None,
                seed: int = 0) -> CLDNetModel:
    """Construct a model with seeded initialization; depth counts hidden layers."""
    if forcing_stats is None:
        forcing_stats = ForcingStats(mean=np.array([0.0]), std=np.array([1.0]))
    rng = np.random.default_rng(seed)
    emb = FourierEmbedding(m=m, scale=fourier_scale,
                           frequencies=rng.standard_normal((m, 2)) * fourier_scale)
    dyn = MLP([d_s + forcing_dim] + [dyn_width] * dyn_depth + [d_s], rng=rng)
    rec_in = d_s + emb.output_dim + (3 if conditioned else 0)
    rec = MLP([rec_in] + [rec_width] * rec_depth + [3], rng=rng)
    return CLDNetModel(dyn=dyn, rec=rec, embedding=emb, d_s=d_s, dt=dt,
                       conditioned=conditioned, forcing_stats=forcing_stats,
                       forcing_dim=forcing_dim)


def forcing_matrix(model: CLDNetModel, forcing, n_snapshots: int) -> np.ndarray:
    """Raw forcing inputs sampled at the snapshot times, shape (N_T, forcing_dim)."""
    rows = []
    for k in range(n_snapshots):
        vec = forcing.forcing_vector(k * model.dt)
        if vec.shape != (model.forcing_dim,):
            raise ContractError(
                f"forcing vector length {vec.shape} does not match model forcing_dim "
                f"{model.forcing_dim}")
        rows.append(vec)
    return np.stack(rows)


def rollout_latent(model: CLDNetModel, forcing_std: np.ndarray) -> np.ndarray:
    """Forward-Euler latent rollout from s = 0 one step before the first snapshot.

    forcing_std must already be standardized with model.forcing_stats. The
    first latent state already depends on the first forcing sample, so the
    decode at t_0 responds to early forcing.
    """
    states, _ = _rollout(model, forcing_std, keep_caches=False)
    return states


def _rollout(model: CLDNetModel, forcing_std: np.ndarray, keep_caches: bool,
             fast: bool = False):
    f = np.asarray(forcing_std, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[1] != model.forcing_dim:
        raise ContractError(
            f"forcing matrix width {f.shape[1]} does not match forcing_dim {model.forcing_dim}")
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite standardized forcing passed to rollout")
    n_t = f.shape[0]
    dt_l = model.dt_latent
    s = np.zeros(model.d_s)
    states = np.empty((n_t, model.d_s))
    caches = [] if keep_caches else None
    for k in range(n_t):
        inp = np.concatenate([s, f[k]])
        if keep_caches:
            out, cache = mlp_forward(model.dyn, inp, with_cache=True, fast=fast)
            caches.append(cache)
        else:
            out = mlp_forward(model.dyn, inp, fast=fast)
        s = s + dt_l * out
        if not np.all(np.isfinite(s)):
            raise NumericError(f"non-finite latent state at rollout step {k}")
        states[k] = s
    return states, caches


def decode_point(model: CLDNetModel, s: np.ndarray, xi, phi=None) -> np.ndarray:
    """Decode (h, hu, hv) at one normalized coordinate xi in [0, 1]^2."""
    if model.conditioned and phi is None:
        raise ContractError("conditioned model requires the terrain feature triple phi")
    if not model.conditioned and phi is not None:
        raise ContractError("unconditioned model must not receive terrain features")
    parts = [np.asarray(s, dtype=np.float64), model.embedding.embed(np.asarray(xi, dtype=np.float64))]
    if phi is not None:
        parts.append(np.asarray(phi, dtype=np.float64))
    return mlp_forward(model.rec, np.concatenate(parts))


def decode_batch(model: CLDNetModel, s_rows: np.ndarray, gamma_rows: np.ndarray,
                 phi_rows: np.ndarray | None) -> np.ndarray:
    """Decode many (latent, embedded-coordinate[, features]) rows at once."""
    parts = [s_rows, gamma_rows]
    if model.conditioned:
        if phi_rows is None:
            raise ContractError("conditioned model requires feature rows")
        parts.append(phi_rows)
    elif phi_rows is not None:
        raise ContractError("unconditioned model must not receive feature rows")
    return mlp_forward(model.rec, np.concatenate(parts, axis=1))


def predict_at_points(model: CLDNetModel, forcing, features: TerrainFeatures,
                      points_xy: np.ndarray, n_snapshots: int,
                      chunk_size: int = DEFAULT_CHUNK, instrument: dict | None = None
                      ) -> np.ndarray:
    """Predict (h, hu, hv) time series at arbitrary world-coordinate points.

    One latent rollout is shared by all queries; decoding is chunked so memory
    scales with min(chunk, N_T * P), never with the raster.
    """
    pts = np.asarray(points_xy, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractError(f"points must have shape (P, 2), got {pts.shape}")
    states = rollout_latent(model, standardize(forcing_matrix(model, forcing, n_snapshots),
                                               model.forcing_stats))
    grid = features.grid
    u, v = grid.to_unit(pts[:, 0], pts[:, 1])
    gamma = model.embedding.embed(np.stack([u, v], axis=1))
    phi = None
    if model.conditioned:
        bz, bg, nsc = features_at(features, pts[:, 0], pts[:, 1])
        phi = np.stack([bz, bg, nsc], axis=1)

    n_p = pts.shape[0]
    out = np.empty((n_snapshots, n_p, 3))
    peak = 0
    total = n_snapshots * n_p
    flat_idx = 0
    # flatten (k, p) pairs in time-major order and decode in fixed-size chunks
    while flat_idx < total:
        hi = min(flat_idx + chunk_size, total)
        rows = np.arange(flat_idx, hi)
        kk = rows // n_p
        pp = rows % n_p
        vals = decode_batch(model, states[kk], gamma[pp], phi[pp] if phi is not None else None)
        out.reshape(total, 3)[flat_idx:hi] = vals
        peak = max(peak, hi - flat_idx)
        flat_idx = hi
    if instrument is not None:
        instrument["peak_rows"] = peak
        instrument["n_queries"] = n_p
    return out


def predict_full_grid(model: CLDNetModel, forcing, features: TerrainFeatures,
                      n_snapshots: int, chunk_size: int = DEFAULT_CHUNK,
                      threads: int = 1, instrument: dict | None = None) -> np.ndarray:
    """Predict on every active cell; masked cells are NaN.

    Output shape (N_T, 3, ny, nx). Decoding is chunked over active cells and
    may be spread over threads; chunks write disjoint slices, so the result is
    identical for any thread count.
    """
    states = rollout_latent(model, standardize(forcing_matrix(model, forcing, n_snapshots),
                                               model.forcing_stats))
    grid = features.grid
    mask = features.mask
    jj, ii = np.nonzero(mask)
    # world coordinates exactly as a point query at the cell center would pass them
    xs = grid.origin_x + ii * grid.dx
    ys = grid.origin_y + jj * grid.dx
    u, v = grid.to_unit(xs, ys)
    gamma = model.embedding.embed(np.stack([u, v], axis=1))
    phi = None
    if model.conditioned:
        phi = np.stack([features.b_z[jj, ii], features.b_g[jj, ii],
                        features.n_scaled[jj, ii]], axis=1)

    n_active = jj.size
    out = np.full((n_snapshots, 3, grid.ny, grid.nx), np.nan)
    flat = out.reshape(n_snapshots, 3, -1)
    cell_flat = jj * grid.nx + ii

    chunks = [(lo, min(lo + chunk_size, n_active)) for lo in range(0, n_active, chunk_size)]

    def run_chunk(bounds):
        lo, hi = bounds
        g_rows = gamma[lo:hi]
        p_rows = phi[lo:hi] if phi is not None else None
        idx = cell_flat[lo:hi]
        for k in range(n_snapshots):
            s_rows = np.broadcast_to(states[k], (hi - lo, model.d_s))
            vals = decode_batch(model, s_rows, g_rows, p_rows)
            flat[k][:, idx] = vals.T

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for bounds in chunks:
            run_chunk(bounds)
    if instrument is not None:
        instrument["peak_rows"] = min(chunk_size, n_active)
        instrument["n_queries"] = n_active
    return out


def save_model(path, model: CLDNetModel, meta: dict | None = None,
               optimizer_arrays: dict | None = None) -> None:
    """Checkpoint: shapes, parameters, embedding, forcing stats, and metadata."""
    info = {
        "kind": model.kind,
        "d_s": model.d_s,
        "dt": model.dt,
        "conditioned": model.conditioned,
        "forcing_dim": model.forcing_dim,
        "m": model.embedding.m,
        "fourier_scale": model.embedding.scale,
        "dyn_widths": model.dyn.widths,
        "rec_widths": model.rec.widths,
        "stats_per_cell": model.forcing_stats.per_cell,
    }
    if meta:
        info.update(meta)
    arrays = {"embedding.B": model.embedding.B,
              "stats.mean": model.forcing_stats.mean,
              "stats.std": model.forcing_stats.std}
    for name, net in (("dyn", model.dyn), ("rec", model.rec)):
        for layer in range(net.n_layers):
            arrays[f"{name}.w{layer}"] = net.weights[layer]
            arrays[f"{name}.b{layer}"] = net.biases[layer]
    if optimizer_arrays:
        for key, arr in optimizer_arrays.items():
            arrays[f"opt.{key}"] = arr
    write_blob(path, info, arrays)


def load_model(path):
    """Load a checkpoint; returns (model, meta, optimizer arrays dict)."""
    meta, arrays = read_blob(path)
    emb = FourierEmbedding(m=int(meta["m"]), scale=float(meta["fourier_scale"]),
                           frequencies=arrays["embedding.B"])
    stats = ForcingStats(mean=arrays["stats.mean"], std=arrays["stats.std"],
                         per_cell=bool(meta["stats_per_cell"]))

    def rebuild(name, widths):
        net = MLP(widths, zero_init=True)
        params = []
        for layer in range(net.n_layers):
            params.append(arrays[f"{name}.w{layer}"])
            params.append(arrays[f"{name}.b{layer}"])
        net.set_parameters(params)
        return net

    model = CLDNetModel(
        dyn=rebuild("dyn", meta["dyn_widths"]),
        rec=rebuild("rec", meta["rec_widths"]),
        embedding=emb, d_s=int(meta["d_s"]), dt=float(meta["dt"]),
        conditioned=bool(meta["conditioned"]), forcing_stats=stats,
        forcing_dim=int(meta["forcing_dim"]))
    opt = {k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")}
    return model, meta, opt
