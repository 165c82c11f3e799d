"""Dense-network substrate: MLPs with exact reverse-mode gradients, Fourier
coordinate embedding, and Adam with cosine learning-rate decay plus global
gradient-norm clipping. All math in 64-bit floats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError


class MLP:
    """Fully connected net: tanh hidden layers, identity output.

    widths = [input, hidden..., output]. Weights use scaled-uniform (Glorot)
    initialization from the given seed; biases start at zero.
    """

    def __init__(self, widths, seed: int | None = None, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ContractError(f"MLP needs at least [input, output] positive widths, got {widths}")
        self.widths = widths
        if rng is None:
            rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            if zero_init:
                w = np.zeros((n_in, n_out))
            else:
                limit = np.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-limit, limit, size=(n_in, n_out))
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))
        self.version = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list:
        """Flat parameter list [W0, b0, W1, b1, ...]; arrays are live references."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameters(self, params: list) -> None:
        if len(params) != 2 * self.n_layers:
            raise ContractError(
                f"expected {2 * self.n_layers} parameter arrays, got {len(params)}")
        for layer in range(self.n_layers):
            w = np.asarray(params[2 * layer], dtype=np.float64)
            b = np.asarray(params[2 * layer + 1], dtype=np.float64)
            if w.shape != self.weights[layer].shape or b.shape != self.biases[layer].shape:
                raise ContractError(f"parameter shape mismatch at layer {layer}")
            self.weights[layer] = w
            self.biases[layer] = b
        self.version += 1

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class MLPCache:
    """Activations recorded by a forward pass, consumed by the matching backward."""

    acts: list = field(repr=False, default=None)
    version: int = 0
    single: bool = False


def affine_rows(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x @ w + b with a fixed accumulation order over the input dimension.

    Every output row is computed by the identical elementwise sequence, so a
    row's result is bit-identical no matter how queries are batched or
    chunked (BLAS matmul reassociates by batch size and breaks that).
    """
    z = np.broadcast_to(b, (x.shape[0], w.shape[1])).copy()
    for k in range(w.shape[0]):
        z += x[:, k, None] * w[k]
    return z


def mlp_forward(net: MLP, x, with_cache: bool = False, fast: bool = False):
    """Evaluate the net on x of shape (input,) or (N, input).

    The default path accumulates each affine map in a fixed order, making
    outputs batch-independent bit-for-bit (the meshless decode contract).
    fast=True switches to BLAS matmul for training-scale batches, where only
    tolerance-level agreement is needed. Returns the output, or
    (output, cache) when with_cache is set.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ContractError(f"input shape {x.shape} incompatible with input width {net.input_dim}")
    acts = [x]
    a = x
    last = net.n_layers - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = (a @ w + b) if fast else affine_rows(a, w, b)
        a = np.tanh(z) if layer < last else z
        acts.append(a)
    out = a[0] if single else a
    if with_cache:
        return out, MLPCache(acts=acts, version=net.version, single=single)
    return out


def mlp_backward(net: MLP, cache: MLPCache, out_grad):
    """Exact reverse-mode gradients for a cached forward pass.

    Returns (param_grads, input_grad); param_grads matches net.parameters()
    layout and is summed over the batch.
    """
    if cache.version != net.version:
        raise ContractError("stale cache: network parameters changed since the forward pass")
    g = np.asarray(out_grad, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    batch = cache.acts[0].shape[0]
    if g.shape != (batch, net.output_dim):
        raise ContractError(
            f"out_grad shape {g.shape} incompatible with batch {batch} x output {net.output_dim}")
    w_grads = [None] * net.n_layers
    b_grads = [None] * net.n_layers
    delta = g
    for layer in range(net.n_layers - 1, -1, -1):
        a_in = cache.acts[layer]
        w_grads[layer] = a_in.T @ delta
        b_grads[layer] = delta.sum(axis=0)
        delta = delta @ net.weights[layer].T
        if layer > 0:
            delta = delta * (1.0 - cache.acts[layer] ** 2)
    param_grads = []
    for wg, bg in zip(w_grads, b_grads):
        param_grads.append(wg)
        param_grads.append(bg)
    input_grad = delta[0] if cache.single else delta
    return param_grads, input_grad


class FourierEmbedding:
    """Random Fourier features of a normalized 2-D coordinate.

    The frequency matrix B (m x 2) is drawn once from a seeded isotropic
    Gaussian scaled by `scale` and is immutable afterwards; the embedding is
    concat(sin(2 pi B xi), cos(2 pi B xi)) of dimension 2m.
    """

    def __init__(self, m: int, seed: int = 0, scale: float = 1.0,
                 frequencies: np.ndarray | None = None):
        if m < 1:
            raise ContractError(f"frequency count must be positive, got {m}")
        self.m = int(m)
        self.scale = float(scale)
        if frequencies is not None:
            B = np.asarray(frequencies, dtype=np.float64).copy()
            if B.shape != (self.m, 2):
                raise ContractError(f"frequency matrix must be ({m}, 2), got {B.shape}")
        else:
            B = np.random.default_rng(seed).standard_normal((self.m, 2)) * self.scale
        B.setflags(write=False)
        self.B = B

    @property
    def output_dim(self) -> int:
        return 2 * self.m

    def embed(self, xi) -> np.ndarray:
        """xi of shape (2,) or (N, 2) -> (2m,) or (N, 2m).

        The projection is written as an explicit two-term sum so embeddings
        are batch-independent bit-for-bit.
        """
        xi = np.asarray(xi, dtype=np.float64)
        single = xi.ndim == 1
        if single:
            xi = xi[None, :]
        if xi.shape[1] != 2:
            raise ContractError(f"expected 2-D coordinates, got shape {xi.shape}")
        proj = xi[:, 0, None] * self.B[:, 0] + xi[:, 1, None] * self.B[:, 1]
        ang = 2.0 * np.pi * proj
        out = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
        return out[0] if single else out


@dataclass
class AdamState:
    """Adam accumulators plus the cosine learning-rate schedule position."""

    m: list
    v: list
    step: int
    base_lr: float
    final_lr: float
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0


def init_adam(params: list, base_lr: float = 1e-3, final_lr: float = 1e-6,
              total_steps: int = 1, clip_norm: float = 1.0, **kw) -> AdamState:
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params],
                     step=0, base_lr=base_lr, final_lr=final_lr,
                     total_steps=total_steps, clip_norm=clip_norm, **kw)


def cosine_lr(step: int, base_lr: float, final_lr: float, total_steps: int) -> float:
    """final + (base - final) * (1 + cos(pi t / total)) / 2."""
    frac = min(max(step / total_steps, 0.0), 1.0)
    return final_lr + (base_lr - final_lr) * 0.5 * (1.0 + np.cos(np.pi * frac))


def global_grad_norm(grads: list) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def clip_global_norm(grads: list, max_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return [g.copy() for g in grads], norm


def adam_step(params: list, grads: list, state: AdamState) -> list:
    """One Adam update; returns new parameter arrays and mutates state in place.

    Gradients are globally norm-clipped before the moment update.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads, and optimizer state lengths disagree")
    if state.step >= state.total_steps:
        raise ContractError(
            f"optimizer exhausted: step {state.step} >= total_steps {state.total_steps}")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    clipped, _ = clip_global_norm(grads, state.clip_norm)
    lr = cosine_lr(state.step, state.base_lr, state.final_lr, state.total_steps)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params = []
    for i, (p, g) in enumerate(zip(params, clipped)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / (1.0 - b1 ** t)
        v_hat = state.v[i] / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    state.step = t
    return new_params
