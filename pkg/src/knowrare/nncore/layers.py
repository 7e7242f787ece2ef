"""Differentiable building blocks with explicit backward passes.

Parameters are plain ``dict[str, ndarray]``; every ``*_forward`` returns the
output plus a cache consumed by the matching ``*_backward``.
"""
import numpy as np

from .. import kernels
from ..errors import ShapeMismatch

LEAKY_SLOPE = 0.01


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def softmax_backward(probs, dprobs):
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def glorot(rng, fan_in, fan_out, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


# -- affine ---------------------------------------------------------------

def init_affine(rng, n_in, n_out):
    return {"W": glorot(rng, n_in, n_out), "b": np.zeros(n_out)}


def affine_forward(params, x):
    W = params["W"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"affine expects last dim {W.shape[0]}, got {x.shape[-1]}")
    return x @ W + params["b"], x


def affine_backward(params, cache, dy):
    x = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads = {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}
    return dy @ params["W"].T, grads


# -- two-layer perceptron -------------------------------------------------

def init_mlp(rng, n_in, n_hidden, n_out):
    return {
        "W1": glorot(rng, n_in, n_hidden),
        "b1": np.zeros(n_hidden),
        "W2": glorot(rng, n_hidden, n_out),
        "b2": np.zeros(n_out),
    }


def mlp_forward(params, x):
    """``W2 . leaky_relu(W1 . x + b1) + b2`` over the last axis of ``x``."""
    if x.shape[-1] != params["W1"].shape[0]:
        raise ShapeMismatch(f"mlp expects last dim {params['W1'].shape[0]}, got {x.shape[-1]}")
    pre = x @ params["W1"] + params["b1"]
    act = leaky_relu(pre)
    return act @ params["W2"] + params["b2"], (x, pre, act)


def mlp_backward(params, cache, dy):
    x, pre, act = cache
    n2 = act.shape[-1]
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads = {
        "W2": act.reshape(-1, n2).T @ dy2,
        "b2": dy2.sum(axis=0),
    }
    dact = dy @ params["W2"].T
    dpre = np.where(pre > 0, dact, LEAKY_SLOPE * dact)
    dpre2 = dpre.reshape(-1, n2)
    grads["W1"] = x.reshape(-1, x.shape[-1]).T @ dpre2
    grads["b1"] = dpre2.sum(axis=0)
    return dpre @ params["W1"].T, grads


# -- LSTM -----------------------------------------------------------------

def init_lstm(rng, n_in, hidden, forget_bias=1.0):
    """Gate blocks are laid out i|f|g|o along the last axis."""
    Wx = np.concatenate([glorot(rng, n_in + hidden, hidden, (n_in, hidden)) for _ in range(4)], axis=1)
    Wh = np.concatenate([glorot(rng, n_in + hidden, hidden, (hidden, hidden)) for _ in range(4)], axis=1)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = forget_bias
    return {"Wx": Wx, "Wh": Wh, "b": b}


def _check_lstm(params, x, h_prev, c_prev):
    n_in, four_h = params["Wx"].shape
    hidden = four_h // 4
    if x.shape[-1] != n_in or h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeMismatch(
            f"lstm expects input {n_in} / hidden {hidden}, got {x.shape[-1]} / "
            f"{h_prev.shape[-1]} / {c_prev.shape[-1]}"
        )


def lstm_step(params, x_t, h_prev, c_prev):
    h, c, _ = lstm_step_forward(params, x_t, h_prev, c_prev)
    return h, c


def lstm_step_forward(params, x_t, h_prev, c_prev):
    x_t = np.atleast_2d(x_t)
    h_prev = np.atleast_2d(h_prev)
    c_prev = np.atleast_2d(c_prev)
    _check_lstm(params, x_t, h_prev, c_prev)
    z = x_t @ params["Wx"] + h_prev @ params["Wh"] + params["b"]
    gates, c, tanh_c, h = kernels.lstm_cell_forward(z, c_prev)
    return h, c, (x_t, h_prev, c_prev, gates, tanh_c)


def lstm_step_backward(params, cache, dh, dc):
    """Returns ``(dx, dh_prev, dc_prev, grads)`` for one cell application."""
    x_t, h_prev, c_prev, gates, tanh_c = cache
    dz, dc_prev = kernels.lstm_cell_backward(dh, dc, gates, c_prev, tanh_c)
    grads = {"Wx": x_t.T @ dz, "Wh": h_prev.T @ dz, "b": dz.sum(axis=0)}
    return dz @ params["Wx"].T, dz @ params["Wh"].T, dc_prev, grads


def lstm_forward(params, x):
    """Unroll over ``x`` of shape (B, T, F) from a zero state; returns hidden states (B, T, H)."""
    if x.ndim != 3:
        raise ShapeMismatch(f"lstm_forward expects (B, T, F), got shape {x.shape}")
    batch, steps, _ = x.shape
    hidden = params["Wh"].shape[0]
    if x.shape[2] != params["Wx"].shape[0]:
        raise ShapeMismatch(f"lstm expects {params['Wx'].shape[0]} features, got {x.shape[2]}")
    # input projection for all steps at once
    zx = x @ params["Wx"] + params["b"]
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    hs = np.empty((batch, steps, hidden))
    caches = []
    for t in range(steps):
        z = zx[:, t] + h @ params["Wh"]
        gates, c_new, tanh_c, h = kernels.lstm_cell_forward(z, c)
        caches.append((c, gates, tanh_c))
        c = c_new
        hs[:, t] = h
    return hs, (x, hs, caches)


def lstm_backward(params, cache, dhs):
    x, hs, caches = cache
    batch, steps, _ = x.shape
    hidden = params["Wh"].shape[0]
    dz_all = np.empty((batch, steps, 4 * hidden))
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    Wh_T = params["Wh"].T
    for t in range(steps - 1, -1, -1):
        c_prev, gates, tanh_c = caches[t]
        dz, dc_next = kernels.lstm_cell_backward(dhs[:, t] + dh_next, dc_next, gates, c_prev, tanh_c)
        dz_all[:, t] = dz
        dh_next = dz @ Wh_T
    dz2 = dz_all.reshape(-1, 4 * hidden)
    h_prev = np.concatenate([np.zeros((batch, 1, hidden)), hs[:, :-1]], axis=1)
    grads = {
        "Wx": x.reshape(-1, x.shape[2]).T @ dz2,
        "Wh": h_prev.reshape(-1, hidden).T @ dz2,
        "b": dz2.sum(axis=0),
    }
    return dz_all @ params["Wx"].T, grads
