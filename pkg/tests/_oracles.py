"""Independent oracles used by the test suite.

Everything here is deliberately written from first principles (loops, closed-form
relations, bisection) and never imports solver/model internals, so a test that
compares against an oracle checks two independent routes to the same value.
"""

import numpy as np

G = 9.81


# Stoker exact dam-break solution (wet-wet, still water both sides) ----------

def stoker_middle_state(h_left, h_right, g=G, tol=1e-14):
    """Solve for the middle depth/velocity of the classical dam-break problem
    (left rarefaction + right shock) by bisection."""
    c_left = np.sqrt(g * h_left)

    def residual(hm):
        # rarefaction relation velocity minus shock relation velocity
        u_rar = 2.0 * (c_left - np.sqrt(g * hm))
        u_shk = (hm - h_right) * np.sqrt(0.5 * g * (hm + h_right) / (hm * h_right))
        return u_rar - u_shk

    lo, hi = h_right, h_left
    f_lo = residual(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = residual(mid)
        if f_lo * f_mid <= 0.0:
            hi = mid
        else:
            lo = mid
            f_lo = f_mid
        if hi - lo < tol * h_left:
            break
    hm = 0.5 * (lo + hi)
    um = 2.0 * (c_left - np.sqrt(g * hm))
    return hm, um


def stoker_profile(x, t, x_dam, h_left, h_right, g=G):
    """Exact (h, u) at positions x and time t > 0 for the wet dam break."""
    hm, um = stoker_middle_state(h_left, h_right, g)
    c_left = np.sqrt(g * h_left)
    cm = np.sqrt(g * hm)
    s_shock = hm * um / (hm - h_right)
    xi = (np.asarray(x, dtype=np.float64) - x_dam) / t

    h = np.empty_like(xi)
    u = np.empty_like(xi)
    left = xi <= -c_left
    fan = (~left) & (xi <= um - cm)
    mid = (~left) & (~fan) & (xi <= s_shock)
    right = xi > s_shock

    h[left] = h_left
    u[left] = 0.0
    c_fan = (2.0 * c_left - xi[fan]) / 3.0
    h[fan] = c_fan * c_fan / g
    u[fan] = 2.0 * (c_left - c_fan)
    h[mid] = hm
    u[mid] = um
    h[right] = h_right
    u[right] = 0.0
    return h, u


def swe_physical_flux(h, u, v, g=G):
    """Exact x-normal flux of the shallow water equations."""
    return np.array([h * u, h * u * u + 0.5 * g * h * h, h * u * v])


# Bilinear interpolation ------------------------------------------------------

def bilinear(x, y, x0, y0, dx, values):
    """Textbook bilinear interpolation on a uniform grid of cell centers.

    values[j, i] sits at (x0 + i*dx, y0 + j*dx).
    """
    fx = (x - x0) / dx
    fy = (y - y0) / dx
    i0 = min(int(np.floor(fx)), values.shape[1] - 2)
    j0 = min(int(np.floor(fy)), values.shape[0] - 2)
    i0 = max(i0, 0)
    j0 = max(j0, 0)
    tx = fx - i0
    ty = fy - j0
    return ((1 - tx) * (1 - ty) * values[j0, i0]
            + tx * (1 - ty) * values[j0, i0 + 1]
            + (1 - tx) * ty * values[j0 + 1, i0]
            + tx * ty * values[j0 + 1, i0 + 1])


# Naive MLP forward ------------------------------------------------------------

def naive_mlp_forward(weights, biases, x):
    """Loop-based forward pass: tanh hidden layers, identity output."""
    a = np.array(x, dtype=np.float64)
    n_layers = len(weights)
    for layer in range(n_layers):
        w = weights[layer]
        b = biases[layer]
        z = np.zeros(w.shape[1])
        for col in range(w.shape[1]):
            acc = b[col]
            for row in range(w.shape[0]):
                acc += a[row] * w[row, col]
            z[col] = acc
        a = np.tanh(z) if layer < n_layers - 1 else z
    return a


# Finite differences -----------------------------------------------------------

def central_difference_grads(fn, params, step=1e-6):
    """Central finite-difference gradient of scalar fn w.r.t. a list of arrays."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            f_plus = fn()
            p[idx] = orig - step
            f_minus = fn()
            p[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * step)
            it.iternext()
        grads.append(g)
    return grads


def grad_rel_error(analytic, numeric, floor=1e-4):
    """Max mixed relative/absolute discrepancy between two gradient lists."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# Friction ODE -----------------------------------------------------------------

def friction_backward_euler_bisect(m_old, k, dt, tol=1e-14):
    """Solve m + dt*k*m^2 = m_old for m in [0, m_old] by bisection."""
    if m_old == 0.0:
        return 0.0

    def f(m):
        return m + dt * k * m * m - m_old

    lo, hi = 0.0, m_old
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol * m_old:
            break
    return 0.5 * (lo + hi)


# Naive metrics ----------------------------------------------------------------

def naive_nse(pred, obs):
    obs_mean = sum(obs) / len(obs)
    num = sum((p - o) ** 2 for p, o in zip(pred, obs))
    den = sum((o - obs_mean) ** 2 for o in obs)
    if den == 0.0:
        return None
    return 1.0 - num / den


def naive_kge(pred, obs):
    n = len(obs)
    mu_p = sum(pred) / n
    mu_o = sum(obs) / n
    sd_p = (sum((p - mu_p) ** 2 for p in pred) / n) ** 0.5
    sd_o = (sum((o - mu_o) ** 2 for o in obs) / n) ** 0.5
    if mu_o == 0.0 or sd_o == 0.0 or sd_p == 0.0:
        return None
    cov = sum((p - mu_p) * (o - mu_o) for p, o in zip(pred, obs)) / n
    r = cov / (sd_p * sd_o)
    return 1.0 - ((r - 1) ** 2 + (sd_p / sd_o - 1) ** 2 + (mu_p / mu_o - 1) ** 2) ** 0.5


def naive_rrmse_percent(pred, ref):
    num = sum((p - r) ** 2 for p, r in zip(pred, ref))
    den = sum(r * r for r in ref)
    if den == 0.0:
        return None
    return 100.0 * (num / den) ** 0.5


def naive_confusion(pred_mask, ref_mask):
    tp = fp = fn = 0
    for p, r in zip(pred_mask, ref_mask):
        if p and r:
            tp += 1
        elif p and not r:
            fp += 1
        elif r and not p:
            fn += 1
    return tp, fp, fn
