"""Trajectory-level surrogate training: wet-union sampling mask, spatially
subsampled MSE loss, backpropagation through the full latent rollout, and a
deterministic training loop with frozen validation points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, TrainingDivergedError
from .forcing import standardize
from .neural import adam_step, init_adam, mlp_backward, mlp_forward
from .surrogate import CLDNetModel, _rollout, forcing_matrix
from .terrain import TerrainFeatures

WET_THRESHOLD_DEFAULT = 0.1  # meters


@dataclass(frozen=True)
class WetUnionMask:
    """Cells whose maximum training-set water depth exceeds the threshold."""

    cells: np.ndarray
    threshold: float
    source_split: str = "train"

    @property
    def population(self) -> int:
        return int(self.cells.sum())

    def flat_indices(self) -> np.ndarray:
        return np.flatnonzero(self.cells)


@dataclass
class TrainConfig:
    points_per_step: int = 256          # M query points per training step
    epochs: int = 200
    seed: int = 0
    shard_count: int = 1
    base_lr: float = 1e-3
    final_lr: float = 1e-6
    clip_norm: float = 1.0
    wet_threshold: float = WET_THRESHOLD_DEFAULT

    def __post_init__(self):
        if self.points_per_step < 1:
            raise ConfigurationError("points_per_step must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.shard_count < 1:
            raise ConfigurationError("shard_count must be >= 1")


def build_wet_union(trajectories, terrain, threshold: float = WET_THRESHOLD_DEFAULT,
                    source_split: str = "train") -> WetUnionMask:
    """Max-over-time-and-trajectories depth mask, restricted to active cells."""
    if not trajectories:
        raise ConfigurationError("wet union needs at least one training trajectory")
    peak = np.zeros(terrain.grid.shape)
    for traj in trajectories:
        for snap in traj.snapshots:
            np.maximum(peak, snap.h, out=peak)
    cells = (peak > threshold) & terrain.mask
    if not cells.any():
        raise ConfigurationError(
            f"wet-union mask is empty at threshold {threshold} m; lower the threshold")
    return WetUnionMask(cells=cells, threshold=threshold, source_split=source_split)


def sample_query_points(mask: WetUnionMask, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of m distinct flat cell indices from the mask."""
    candidates = mask.flat_indices()
    if m > candidates.size:
        raise ConfigurationError(
            f"cannot sample {m} points from a {candidates.size}-cell wet union")
    return rng.choice(candidates, size=m, replace=False)


@dataclass
class _TrajectoryData:
    """Precomputed per-trajectory tensors reused across epochs."""

    forcing_std: np.ndarray   # (N_T, forcing_dim)
    fields: np.ndarray        # (N_T, 3, ny, nx)
    n_t: int


def _prepare(model: CLDNetModel, trajectory) -> _TrajectoryData:
    fields = trajectory.as_array()
    n_t = fields.shape[0]
    raw = forcing_matrix(model, trajectory.forcing, n_t)
    return _TrajectoryData(forcing_std=standardize(raw, model.forcing_stats),
                           fields=fields, n_t=n_t)


def _point_inputs(model: CLDNetModel, features: TerrainFeatures, flat_points: np.ndarray):
    """Embedded coordinates and (optionally) feature rows for sampled cells."""
    grid = features.grid
    jj, ii = np.unravel_index(flat_points, grid.shape)
    xs = grid.origin_x + ii * grid.dx
    ys = grid.origin_y + jj * grid.dx
    u, v = grid.to_unit(xs, ys)
    gamma = model.embedding.embed(np.stack([u, v], axis=1))
    phi = None
    if model.conditioned:
        phi = np.stack([features.b_z[jj, ii], features.b_g[jj, ii],
                        features.n_scaled[jj, ii]], axis=1)
    return gamma, phi, (jj, ii)


def compute_loss(model: CLDNetModel, trajectory, points: np.ndarray,
                 features: TerrainFeatures, want_grads: bool = True):
    """Subsampled MSE over the full trajectory at the given flat cell indices.

    L = (1 / (N_T * M)) * sum_k sum_m || q_pred(t_k, xi_m) - q(t_k, xi_m) ||^2.
    Gradients flow through the decoder and the entire Euler rollout (BPTT).
    Returns (loss, grads) with grads = {"rec": [...], "dyn": [...]} or
    (loss, None) when want_grads is false.
    """
    data = _prepare(model, trajectory)
    gamma, phi, (jj, ii) = _point_inputs(model, features, np.asarray(points))
    refs = data.fields[:, :, jj, ii].transpose(0, 2, 1)  # (N_T, M, 3)
    return _loss_and_grads(model, data.forcing_std, gamma, phi, refs,
                           weight=1.0 / (data.n_t * len(points)),
                           want_grads=want_grads)


def _loss_and_grads(model: CLDNetModel, forcing_std, gamma, phi, refs,
                    weight: float, want_grads: bool):
    """Core loss; `weight` scales each squared residual so shard losses add up.

    Uses the BLAS fast path throughout: training needs tolerance-level
    reproducibility, not the decode path's bit-level batch independence.
    """
    n_t, m_pts = refs.shape[0], refs.shape[1]
    states, caches = _rollout(model, forcing_std, keep_caches=want_grads, fast=True)

    s_rows = np.repeat(states, m_pts, axis=0)
    g_rows = np.tile(gamma, (n_t, 1))
    parts = [s_rows, g_rows]
    if model.conditioned:
        parts.append(np.tile(phi, (n_t, 1)))
    x = np.concatenate(parts, axis=1)

    if want_grads:
        preds, rec_cache = mlp_forward(model.rec, x, with_cache=True, fast=True)
    else:
        preds = mlp_forward(model.rec, x, fast=True)
    diff = preds - refs.reshape(n_t * m_pts, 3)
    loss = float((diff * diff).sum() * weight)
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")
    if not want_grads:
        return loss, None

    dpreds = 2.0 * weight * diff
    rec_grads, dx = mlp_backward(model.rec, rec_cache, dpreds)
    ds = dx[:, :model.d_s].reshape(n_t, m_pts, model.d_s).sum(axis=1)

    dt_l = model.dt_latent
    dyn_grads = [np.zeros_like(p) for p in model.dyn.parameters()]
    lam = np.zeros(model.d_s)
    for k in range(n_t - 1, -1, -1):
        lam = lam + ds[k]
        pg, ig = mlp_backward(model.dyn, caches[k], dt_l * lam)
        for acc, g in zip(dyn_grads, pg):
            acc += g
        lam = lam + ig[:model.d_s]
    return loss, {"rec": rec_grads, "dyn": dyn_grads}


def _sum_grads(total, part):
    if total is None:
        return {"rec": [g.copy() for g in part["rec"]],
                "dyn": [g.copy() for g in part["dyn"]]}
    for key in ("rec", "dyn"):
        for acc, g in zip(total[key], part[key]):
            acc += g
    return total


@dataclass
class TrainResult:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.inf
    steps: int = 0
    optimizer: object = None  # final AdamState (accumulators + schedule position)


def train(model: CLDNetModel, train_trajectories, val_trajectories,
          features: TerrainFeatures, wet_mask: WetUnionMask,
          config: TrainConfig) -> TrainResult:
    """Train with batch size one trajectory per optimization step.

    Training trajectories are cycled in a seeded shuffled order per epoch;
    query points are resampled per step without replacement. Validation uses a
    point set per validation trajectory sampled once from a dedicated seed and
    frozen across epochs; when no validation split is given, the training
    trajectories double as a monitoring set (frozen points, loss only). The
    model ends restored to the best-validation parameters.
    """
    result = TrainResult()
    if config.epochs == 0:
        return result
    if not train_trajectories:
        raise ConfigurationError("training needs at least one trajectory")
    if config.points_per_step > wet_mask.population:
        raise ConfigurationError(
            f"points_per_step={config.points_per_step} exceeds wet-union population "
            f"{wet_mask.population}")

    seq = np.random.SeedSequence(config.seed)
    order_rng, point_rng, val_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    train_data = [_prepare(model, t) for t in train_trajectories]
    if val_trajectories:
        monitor = val_trajectories
        monitor_data = [_prepare(model, t) for t in val_trajectories]
    else:
        # no validation split: monitor a few training trajectories instead
        monitor = train_trajectories[:3]
        monitor_data = train_data[:3]
    frozen = []
    for _ in monitor:
        pts = sample_query_points(wet_mask, config.points_per_step, val_rng)
        frozen.append(pts)
    monitor_inputs = [_point_inputs(model, features, pts) for pts in frozen]

    total_steps = config.epochs * len(train_trajectories)
    params = model.rec.parameters() + model.dyn.parameters()
    n_rec = 2 * model.rec.n_layers
    opt = init_adam(params, base_lr=config.base_lr, final_lr=config.final_lr,
                    total_steps=total_steps, clip_norm=config.clip_norm)
    result.optimizer = opt

    best_params = None
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train_trajectories))
        epoch_losses = []
        for tid in order:
            data = train_data[tid]
            pts = sample_query_points(wet_mask, config.points_per_step, point_rng)
            gamma, phi, (jj, ii) = _point_inputs(model, features, pts)
            refs = data.fields[:, :, jj, ii].transpose(0, 2, 1)
            weight = 1.0 / (data.n_t * config.points_per_step)

            loss = 0.0
            grads = None
            for lo in _shard_bounds(config.points_per_step, config.shard_count):
                a, b = lo
                part_loss, part_grads = _loss_and_grads(
                    model, data.forcing_std, gamma[a:b],
                    phi[a:b] if phi is not None else None,
                    refs[:, a:b], weight=weight, want_grads=True)
                loss += part_loss
                grads = _sum_grads(grads, part_grads)
            flat_grads = grads["rec"] + grads["dyn"]
            params = model.rec.parameters() + model.dyn.parameters()
            new_params = adam_step(params, flat_grads, opt)
            model.rec.set_parameters(new_params[:n_rec])
            model.dyn.set_parameters(new_params[n_rec:])
            epoch_losses.append(loss)
            result.steps += 1

        result.train_losses.append(float(np.mean(epoch_losses)))
        val_loss = _monitor_loss(model, monitor_data, monitor_inputs, config)
        result.val_losses.append(val_loss)
        if not np.isfinite(val_loss):
            if best_params is not None:
                model.rec.set_parameters([p.copy() for p in best_params[:n_rec]])
                model.dyn.set_parameters([p.copy() for p in best_params[n_rec:]])
            raise TrainingDivergedError(
                f"validation loss became non-finite at epoch {epoch}",
                last_good=model, epoch=epoch)
        if val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_params = [p.copy() for p in model.rec.parameters() + model.dyn.parameters()]

    if best_params is not None:
        model.rec.set_parameters(best_params[:n_rec])
        model.dyn.set_parameters(best_params[n_rec:])
    return result


def _shard_bounds(m: int, shards: int):
    """Contiguous, fixed-order partition of range(m) into at most `shards` pieces."""
    shards = min(shards, m)
    edges = np.linspace(0, m, shards + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _monitor_loss(model, monitor_data, monitor_inputs, config) -> float:
    losses = []
    for data, (gamma, phi, (jj, ii)) in zip(monitor_data, monitor_inputs):
        refs = data.fields[:, :, jj, ii].transpose(0, 2, 1)
        weight = 1.0 / (data.n_t * refs.shape[1])
        try:
            loss, _ = _loss_and_grads(model, data.forcing_std, gamma, phi, refs,
                                      weight=weight, want_grads=False)
        except NumericError:
            return float("nan")
        losses.append(loss)
    return float(np.mean(losses))


def save_loss_curves(path, result: TrainResult) -> None:
    """CSV columns: epoch, train_loss, val_loss."""
    lines = ["epoch,train_loss,val_loss"]
    for e, (tr, va) in enumerate(zip(result.train_losses, result.val_losses)):
        lines.append(f"{e},{repr(tr)},{repr(va)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
