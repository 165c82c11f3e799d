"""Latent rollout, meshless conditional decoding, prediction paths, checkpoints."""

import numpy as np
import pytest

from floodlab.errors import ContractError, NumericError
from floodlab.forcing import ForcingStats, Hyetograph, fit_forcing_stats, standardize
from floodlab.grid import RasterGrid
from floodlab.neural import MLP, mlp_forward
from floodlab.surrogate import (CLDNetModel, build_model, decode_point,
                                forcing_matrix, load_model, predict_at_points,
                                predict_full_grid, rollout_latent, save_model)
from floodlab.terrain import compute_features, generate_dem


def unit_stats():
    return ForcingStats(mean=np.array([0.0]), std=np.array([1.0]))


def small_model(conditioned=True, seed=0, d_s=4, m=3, forcing_dim=1, dt=3600.0):
    return build_model(d_s=d_s, m=m, dyn_depth=2, dyn_width=8,
                       rec_depth=2, rec_width=12, conditioned=conditioned,
                       forcing_dim=forcing_dim, dt=dt, forcing_stats=unit_stats(),
                       seed=seed)


class TestRollout:
    def test_zero_dyn_net_gives_zero_latents(self):
        model = small_model()
        model.dyn.set_parameters([np.zeros_like(p) for p in model.dyn.parameters()])
        states = rollout_latent(model, np.zeros((6, 1)))
        np.testing.assert_array_equal(states, 0.0)

    def test_constant_rhs_euler_ramp(self):
        model = small_model(d_s=3)
        # force F == c by zeroing everything except the output bias
        params = [np.zeros_like(p) for p in model.dyn.parameters()]
        c = np.array([0.5, -1.0, 2.0])
        params[-1] = c.copy()
        model.dyn.set_parameters(params)
        states = rollout_latent(model, np.zeros((5, 1)))
        dt_l = model.dt_latent
        for k in range(5):
            np.testing.assert_allclose(states[k], (k + 1) * dt_l * c, rtol=1e-14)

    def test_matches_duplicate_recurrence_oracle(self):
        model = small_model(seed=3)
        rng = np.random.default_rng(0)
        forcing = rng.standard_normal((8, 1))
        states = rollout_latent(model, forcing)
        # independent step-by-step re-evaluation of the recurrence
        s = np.zeros(model.d_s)
        for k in range(8):
            rhs = mlp_forward(model.dyn, np.concatenate([s, forcing[k]]))
            s = s + model.dt_latent * rhs
            np.testing.assert_allclose(states[k], s, rtol=1e-14, atol=1e-16)

    def test_first_state_depends_on_first_forcing(self):
        model = small_model(seed=4)
        a = rollout_latent(model, np.array([[0.0], [0.0]]))
        b = rollout_latent(model, np.array([[1.0], [0.0]]))
        assert not np.allclose(a[0], b[0])

    def test_non_finite_forcing_rejected(self):
        model = small_model(seed=5)
        with pytest.raises(NumericError):
            rollout_latent(model, np.array([[np.inf], [0.0]]))

    def test_non_finite_latent_raises_with_step(self):
        model = small_model(seed=5)
        params = [p.copy() for p in model.dyn.parameters()]
        params[-1] = np.full_like(params[-1], np.inf)  # output bias -> inf latent
        model.dyn.set_parameters(params)
        with pytest.raises(NumericError) as err:
            rollout_latent(model, np.zeros((3, 1)))
        assert "step 0" in str(err.value)

    def test_width_validation(self):
        model = small_model()
        with pytest.raises(ContractError):
            CLDNetModel(dyn=MLP([3, 4], seed=0), rec=model.rec,
                        embedding=model.embedding, d_s=model.d_s, dt=model.dt,
                        conditioned=model.conditioned,
                        forcing_stats=model.forcing_stats, forcing_dim=1)


class TestDecodePoint:
    def test_zero_rec_net(self):
        model = small_model()
        model.rec.set_parameters([np.zeros_like(p) for p in model.rec.parameters()])
        out = decode_point(model, np.ones(model.d_s), np.array([0.3, 0.7]),
                           phi=np.array([0.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 0.0])

    def test_conditioning_contract(self):
        cond = small_model(conditioned=True)
        with pytest.raises(ContractError):
            decode_point(cond, np.zeros(cond.d_s), np.array([0.1, 0.1]))
        plain = small_model(conditioned=False)
        with pytest.raises(ContractError):
            decode_point(plain, np.zeros(plain.d_s), np.array([0.1, 0.1]),
                         phi=np.array([0.0, 0.0, 2.0]))

    def test_manning_sensitivity_generic_net(self):
        model = small_model(conditioned=True, seed=6)
        s = np.random.default_rng(1).standard_normal(model.d_s)
        xi = np.array([0.4, 0.6])
        out2 = decode_point(model, s, xi, phi=np.array([0.0, 0.0, 2.0]))
        out5 = decode_point(model, s, xi, phi=np.array([0.0, 0.0, 5.0]))
        assert not np.allclose(out2, out5)

    def test_unconditioned_ignores_features_entirely(self):
        model = small_model(conditioned=False, seed=7)
        s = np.zeros(model.d_s)
        out = decode_point(model, s, np.array([0.2, 0.9]))
        assert out.shape == (3,)


class SetupPrediction:
    def setup_method(self):
        self.grid = RasterGrid(nx=12, ny=10, dx=30.0)
        self.terrain = generate_dem(self.grid, seed=2, style="valley")
        self.features = compute_features(self.terrain)
        self.forcing = Hyetograph(rates=np.array([1e-5, 3e-5, 0.0]), dt_force=3600.0)
        self.stats = fit_forcing_stats([self.forcing])
        self.model = build_model(d_s=4, m=3, dyn_depth=2, dyn_width=8,
                                 rec_depth=2, rec_width=12, conditioned=True,
                                 forcing_dim=1, dt=3600.0, forcing_stats=self.stats,
                                 seed=8)
        self.n_t = 4


class TestPredict(SetupPrediction):
    def test_subset_equals_full_grid_restriction(self):
        full = predict_full_grid(self.model, self.forcing, self.features, self.n_t)
        pts_ji = [(0, 0), (3, 7), (9, 11), (5, 5)]
        xy = np.array([[self.grid.origin_x + i * self.grid.dx,
                        self.grid.origin_y + j * self.grid.dx] for j, i in pts_ji])
        vals = predict_at_points(self.model, self.forcing, self.features, xy, self.n_t)
        for p, (j, i) in enumerate(pts_ji):
            for k in range(self.n_t):
                np.testing.assert_array_equal(vals[k, p], full[k, :, j, i])

    def test_single_point_equals_batch(self):
        xy = np.array([[self.grid.origin_x + 4 * self.grid.dx,
                        self.grid.origin_y + 6 * self.grid.dx],
                       [self.grid.origin_x + 2 * self.grid.dx,
                        self.grid.origin_y + 1 * self.grid.dx]])
        both = predict_at_points(self.model, self.forcing, self.features, xy, self.n_t)
        one = predict_at_points(self.model, self.forcing, self.features, xy[:1], self.n_t)
        np.testing.assert_array_equal(both[:, 0], one[:, 0])

    def test_chunking_invariance(self):
        xy = np.array([[self.grid.origin_x + i * self.grid.dx,
                        self.grid.origin_y + 2 * self.grid.dx] for i in range(10)])
        a = predict_at_points(self.model, self.forcing, self.features, xy, self.n_t,
                              chunk_size=7)
        b = predict_at_points(self.model, self.forcing, self.features, xy, self.n_t,
                              chunk_size=1000)
        np.testing.assert_array_equal(a, b)

    def test_forward_pass_deterministic(self):
        full1 = predict_full_grid(self.model, self.forcing, self.features, self.n_t)
        full2 = predict_full_grid(self.model, self.forcing, self.features, self.n_t)
        np.testing.assert_array_equal(np.nan_to_num(full1), np.nan_to_num(full2))

    def test_threads_do_not_change_bytes(self):
        a = predict_full_grid(self.model, self.forcing, self.features, self.n_t,
                              chunk_size=16, threads=1)
        b = predict_full_grid(self.model, self.forcing, self.features, self.n_t,
                              chunk_size=16, threads=4)
        np.testing.assert_array_equal(np.nan_to_num(a), np.nan_to_num(b))

    def test_memory_instrumentation(self):
        inst = {}
        xy = np.array([[self.grid.origin_x + 3 * self.grid.dx,
                        self.grid.origin_y + 3 * self.grid.dx]] * 10)
        predict_at_points(self.model, self.forcing, self.features, xy, self.n_t,
                          instrument=inst)
        assert inst["n_queries"] == 10
        assert inst["peak_rows"] <= 10 * self.n_t

    def test_unconditioned_invariant_to_terrain(self):
        model = build_model(d_s=4, m=3, dyn_depth=2, dyn_width=8, rec_depth=2,
                            rec_width=12, conditioned=False, forcing_dim=1,
                            dt=3600.0, forcing_stats=self.stats, seed=9)
        other_terrain = generate_dem(self.grid, seed=99, style="fractal")
        other_features = compute_features(other_terrain)
        a = predict_full_grid(model, self.forcing, self.features, self.n_t)
        b = predict_full_grid(model, self.forcing, other_features, self.n_t)
        np.testing.assert_array_equal(np.nan_to_num(a), np.nan_to_num(b))

    def test_rollout_independent_of_queries(self):
        f_std = standardize(forcing_matrix(self.model, self.forcing, self.n_t),
                            self.model.forcing_stats)
        states = rollout_latent(self.model, f_std)
        assert states.shape == (self.n_t, self.model.d_s)


class TestCheckpoint(SetupPrediction):
    def test_round_trip_predictions_identical(self, tmp_path):
        path = tmp_path / "model.nnb"
        save_model(path, self.model, meta={"note": 1})
        loaded, meta, opt = load_model(path)
        assert meta["kind"] == "cldnet"
        assert meta["note"] == 1
        assert opt == {}
        a = predict_full_grid(self.model, self.forcing, self.features, self.n_t)
        b = predict_full_grid(loaded, self.forcing, self.features, self.n_t)
        np.testing.assert_array_equal(np.nan_to_num(a), np.nan_to_num(b))

    def test_kind_tag_for_ablation(self, tmp_path):
        model = build_model(d_s=4, m=3, dyn_depth=1, dyn_width=4, rec_depth=1,
                            rec_width=4, conditioned=False, forcing_dim=1,
                            dt=3600.0, forcing_stats=unit_stats(), seed=1)
        save_model(tmp_path / "ldnet.nnb", model)
        _, meta, _ = load_model(tmp_path / "ldnet.nnb")
        assert meta["kind"] == "ldnet"

    def test_optimizer_arrays_round_trip(self, tmp_path):
        path = tmp_path / "opt.nnb"
        save_model(path, self.model, optimizer_arrays={"m0": np.arange(3.0)})
        _, _, opt = load_model(path)
        np.testing.assert_array_equal(opt["m0"], np.arange(3.0))
