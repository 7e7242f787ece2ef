"""Pure-numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``KNOWRARE_PURE_PYTHON=1`` is set. Signatures mirror ``_kernels.pyx``.
"""
import numpy as np


def window_means(minutes, var_idx, values, start, window_minutes, window_count, n_vars):
    minutes = np.asarray(minutes, dtype=np.float64)
    var_idx = np.asarray(var_idx, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    end = start + window_minutes * window_count
    keep = (minutes >= start) & (minutes <= end) & ~np.isnan(values)
    slot = np.floor((minutes[keep] - start) / window_minutes).astype(np.int64)
    slot = np.minimum(slot, window_count - 1)
    flat = slot * n_vars + var_idx[keep]
    size = window_count * n_vars
    sums = np.bincount(flat, weights=values[keep], minlength=size)
    counts = np.bincount(flat, minlength=size)
    out = np.full(size, np.nan)
    seen = counts > 0
    out[seen] = sums[seen] / counts[seen]
    return out.reshape(window_count, n_vars)


def fill_missing(x, fallback):
    """Forward fill, then backward fill, then ``fallback[f]`` per column."""
    out = np.array(x, dtype=np.float64, copy=True)
    n_steps = out.shape[0]
    for t in range(1, n_steps):
        gap = np.isnan(out[t])
        out[t, gap] = out[t - 1, gap]
    for t in range(n_steps - 2, -1, -1):
        gap = np.isnan(out[t])
        out[t, gap] = out[t + 1, gap]
    gap = np.isnan(out)
    if gap.any():
        out[gap] = np.broadcast_to(np.asarray(fallback, dtype=np.float64), out.shape)[gap]
    return out


def ranked_auc(scores_desc, labels):
    """AUROC (half credit on ties) and average precision from scores sorted descending.

    Returns ``(auroc, ap, n_pos, n_neg)``; either area is NaN when undefined.
    """
    s = np.asarray(scores_desc, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n_pos = float(y.sum())
    n_neg = float(y.size - n_pos)
    ends = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(1.0 - y)[ends]
    p_g = np.diff(tp, prepend=0.0)
    n_g = np.diff(fp, prepend=0.0)
    if n_pos > 0 and n_neg > 0:
        auroc = float(np.sum(p_g * (n_neg - fp) + 0.5 * p_g * n_g)) / (n_pos * n_neg)
    else:
        auroc = float("nan")
    if n_pos > 0:
        ap = float(np.sum(p_g * (tp / (tp + fp)))) / n_pos
    else:
        ap = float("nan")
    return auroc, ap, int(n_pos), int(n_neg)


def _logistic(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell_forward(z, c_prev):
    """Gate activations and new state from pre-activations ``z`` (B, 4H), order i|f|g|o."""
    hidden = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, : 2 * hidden] = _logistic(z[:, : 2 * hidden])
    gates[:, 2 * hidden : 3 * hidden] = np.tanh(z[:, 2 * hidden : 3 * hidden])
    gates[:, 3 * hidden :] = _logistic(z[:, 3 * hidden :])
    i = gates[:, :hidden]
    f = gates[:, hidden : 2 * hidden]
    g = gates[:, 2 * hidden : 3 * hidden]
    o = gates[:, 3 * hidden :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return gates, c, tanh_c, h


def lstm_cell_backward(dh, dc, gates, c_prev, tanh_c):
    hidden = c_prev.shape[1]
    i = gates[:, :hidden]
    f = gates[:, hidden : 2 * hidden]
    g = gates[:, 2 * hidden : 3 * hidden]
    o = gates[:, 3 * hidden :]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :hidden] = dc_total * g * i * (1.0 - i)
    dz[:, hidden : 2 * hidden] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * hidden : 3 * hidden] = dc_total * i * (1.0 - g * g)
    dz[:, 3 * hidden :] = dh * tanh_c * o * (1.0 - o)
    return dz, dc_total * f
