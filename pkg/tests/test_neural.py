"""MLP forward/backward, Fourier embedding, Adam with cosine decay and clipping."""

import numpy as np
import pytest

from floodlab.errors import ContractError, NumericError
from floodlab.neural import (MLP, FourierEmbedding, adam_step,
                             clip_global_norm, cosine_lr, global_grad_norm,
                             init_adam, mlp_backward, mlp_forward)

from _oracles import central_difference_grads, grad_rel_error, naive_mlp_forward


class TestMlpForward:
    def test_zero_net_outputs_zero(self):
        net = MLP([3, 5, 2], zero_init=True)
        out = mlp_forward(net, np.array([1.0, -2.0, 0.5]))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_single_linear_layer(self):
        net = MLP([2, 3], seed=0)
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        b = np.array([0.1, 0.2, 0.3])
        net.set_parameters([w, b])
        x = np.array([1.0, -1.0])
        np.testing.assert_allclose(mlp_forward(net, x), x @ w + b, rtol=1e-15)

    def test_matches_naive_reimplementation(self):
        rng = np.random.default_rng(7)
        net = MLP([4, 8, 8, 3], seed=42)
        for _ in range(20):
            x = rng.standard_normal(4)
            fast = mlp_forward(net, x)
            slow = naive_mlp_forward(net.weights, net.biases, x)
            np.testing.assert_allclose(fast, slow, rtol=1e-14, atol=1e-14)

    def test_batched_equals_single(self):
        rng = np.random.default_rng(8)
        net = MLP([3, 6, 2], seed=1)
        xs = rng.standard_normal((10, 3))
        batch = mlp_forward(net, xs)
        for k in range(10):
            np.testing.assert_array_equal(mlp_forward(net, xs[k]), batch[k])

    def test_shape_mismatch_rejected(self):
        net = MLP([3, 2], seed=0)
        with pytest.raises(ContractError):
            mlp_forward(net, np.zeros(4))

    def test_seeded_init_deterministic(self):
        a = MLP([4, 8, 2], seed=5)
        b = MLP([4, 8, 2], seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)


class TestMlpBackward:
    def test_linear_layer_analytic(self):
        net = MLP([2, 3], seed=0)
        x = np.array([1.5, -0.5])
        out, cache = mlp_forward(net, x, with_cache=True)
        g = np.array([1.0, 0.0, -2.0])
        grads, input_grad = mlp_backward(net, cache, g)
        np.testing.assert_allclose(grads[0], np.outer(x, g), rtol=1e-15)
        np.testing.assert_allclose(grads[1], g, rtol=1e-15)
        np.testing.assert_allclose(input_grad, net.weights[0] @ g, rtol=1e-15)

    def test_param_grads_match_finite_differences(self):
        rng = np.random.default_rng(3)
        net = MLP([3, 6, 6, 2], seed=11)
        x = rng.standard_normal(3)
        g_out = rng.standard_normal(2)

        def loss():
            return float(mlp_forward(net, x) @ g_out)

        out, cache = mlp_forward(net, x, with_cache=True)
        analytic, _ = mlp_backward(net, cache, g_out)
        numeric = central_difference_grads(loss, net.parameters())
        assert grad_rel_error(analytic, numeric) < 1e-5

    def test_input_grad_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        net = MLP([3, 8, 2], seed=12)
        x = rng.standard_normal(3)
        g_out = rng.standard_normal(2)
        _, cache = mlp_forward(net, x, with_cache=True)
        _, input_grad = mlp_backward(net, cache, g_out)

        def loss():
            return float(mlp_forward(net, x) @ g_out)

        numeric = central_difference_grads(loss, [x])
        assert grad_rel_error([input_grad], numeric) < 1e-5

    def test_gradient_check_suite(self):
        # random probes over nets up to width 32 / depth 4
        rng = np.random.default_rng(5)
        for widths in ([2, 16, 1], [4, 32, 32, 3], [3, 8, 8, 8, 2]):
            net = MLP(widths, seed=int(rng.integers(1 << 16)))
            x = rng.standard_normal(widths[0])
            g_out = rng.standard_normal(widths[-1])
            _, cache = mlp_forward(net, x, with_cache=True)
            analytic, _ = mlp_backward(net, cache, g_out)

            def loss():
                return float(mlp_forward(net, x) @ g_out)

            # probe a random subset of parameters per net
            probes = 0
            numeric = central_difference_grads(loss, net.parameters())
            err = grad_rel_error(analytic, numeric)
            assert err < 1e-5, f"gradient error {err:.2e} for widths {widths}"

    def test_stale_cache_rejected(self):
        net = MLP([2, 3], seed=0)
        _, cache = mlp_forward(net, np.zeros(2), with_cache=True)
        net.set_parameters([p.copy() for p in net.parameters()])
        with pytest.raises(ContractError):
            mlp_backward(net, cache, np.zeros(3))

    def test_batch_grads_sum(self):
        rng = np.random.default_rng(6)
        net = MLP([3, 5, 2], seed=2)
        xs = rng.standard_normal((4, 3))
        gs = rng.standard_normal((4, 2))
        _, cache = mlp_forward(net, xs, with_cache=True)
        batch_grads, batch_ig = mlp_backward(net, cache, gs)
        acc = [np.zeros_like(p) for p in net.parameters()]
        for k in range(4):
            _, c = mlp_forward(net, xs[k], with_cache=True)
            g, ig = mlp_backward(net, c, gs[k])
            for a, gg in zip(acc, g):
                a += gg
            np.testing.assert_allclose(batch_ig[k], ig, rtol=1e-14, atol=1e-15)
        for a, bg in zip(acc, batch_grads):
            np.testing.assert_allclose(bg, a, rtol=1e-12, atol=1e-14)


class TestFourierEmbedding:
    def test_origin_embedding(self):
        emb = FourierEmbedding(m=6, seed=0)
        out = emb.embed(np.array([0.0, 0.0]))
        np.testing.assert_array_equal(out[:6], 0.0)
        np.testing.assert_array_equal(out[6:], 1.0)

    def test_output_dimension(self):
        assert FourierEmbedding(m=10, seed=0).output_dim == 20
        assert FourierEmbedding(m=10, seed=0).embed(np.zeros(2)).shape == (20,)

    def test_periodicity_with_integer_frequencies(self):
        freq = np.array([[1.0, 0.0], [2.0, 3.0], [0.0, 5.0]])
        emb = FourierEmbedding(m=3, frequencies=freq)
        rng = np.random.default_rng(10)
        for _ in range(20):
            xi = rng.uniform(0, 1, 2)
            base = emb.embed(xi)
            np.testing.assert_allclose(emb.embed(xi + [1.0, 0.0]), base, atol=1e-9)
            np.testing.assert_allclose(emb.embed(xi + [0.0, 1.0]), base, atol=1e-9)

    def test_frequencies_immutable(self):
        emb = FourierEmbedding(m=4, seed=1)
        with pytest.raises(ValueError):
            emb.B[0, 0] = 5.0

    def test_batch_matches_single(self):
        emb = FourierEmbedding(m=5, seed=2)
        xs = np.random.default_rng(3).uniform(0, 1, (7, 2))
        batch = emb.embed(xs)
        for k in range(7):
            np.testing.assert_array_equal(emb.embed(xs[k]), batch[k])


class TestAdam:
    def make(self, n=3, total=100, **kw):
        rng = np.random.default_rng(0)
        params = [rng.standard_normal((2, 2)), rng.standard_normal(4)]
        state = init_adam(params, total_steps=total, **kw)
        return params, state

    def test_lr_schedule_endpoints(self):
        assert cosine_lr(0, 1e-3, 1e-6, 100) == pytest.approx(1e-3)
        assert cosine_lr(100, 1e-3, 1e-6, 100) == pytest.approx(1e-6, abs=1e-18)

    def test_lr_monotone_nonincreasing(self):
        lrs = [cosine_lr(t, 1e-3, 1e-6, 50) for t in range(51)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_zero_grads_leave_params(self):
        params, state = self.make()
        grads = [np.zeros_like(p) for p in params]
        new = adam_step(params, grads, state)
        for p, q in zip(params, new):
            np.testing.assert_array_equal(p, q)
        assert state.step == 1

    def test_clip_to_unit_norm(self):
        rng = np.random.default_rng(1)
        grads = [rng.standard_normal((3, 3)), rng.standard_normal(5)]
        scale = 10.0 / global_grad_norm(grads)
        grads = [g * scale for g in grads]
        assert global_grad_norm(grads) == pytest.approx(10.0, rel=1e-12)
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(10.0, rel=1e-12)
        assert global_grad_norm(clipped) == pytest.approx(1.0, rel=1e-12)

    def test_clip_never_increases(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            grads = [rng.standard_normal(4) * rng.uniform(0.01, 5)]
            clipped, _ = clip_global_norm(grads, 1.0)
            assert global_grad_norm(clipped) <= max(global_grad_norm(grads), 1.0) + 1e-12

    def test_descends_a_quadratic(self):
        params = [np.array([5.0, -3.0])]
        state = init_adam(params, base_lr=0.1, final_lr=1e-4, total_steps=300)
        for _ in range(300):
            grads = [2.0 * params[0]]
            params = adam_step(params, grads, state)
        assert np.abs(params[0]).max() < 0.05

    def test_exhausted_schedule_rejected(self):
        params, state = self.make(total=1)
        adam_step(params, [np.ones_like(p) for p in params], state)
        with pytest.raises(ContractError):
            adam_step(params, [np.ones_like(p) for p in params], state)

    def test_non_finite_grads_rejected(self):
        params, state = self.make()
        grads = [np.full_like(p, np.nan) for p in params]
        with pytest.raises(NumericError):
            adam_step(params, grads, state)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            params, state = self.make()
            rng = np.random.default_rng(9)
            for _ in range(5):
                grads = [rng.standard_normal(p.shape) for p in params]
                params = adam_step(params, grads, state)
            runs.append(params)
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)
