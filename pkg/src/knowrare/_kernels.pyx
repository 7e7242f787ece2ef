# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loop-bound kernels; see ``_kernels_py`` for the reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, floor, isnan, NAN

cnp.import_array()


def window_means(minutes, var_idx, values, double start, double window_minutes,
                 Py_ssize_t window_count, Py_ssize_t n_vars):
    cdef const double[:] m = np.ascontiguousarray(minutes, dtype=np.float64)
    cdef const long long[:] v = np.ascontiguousarray(var_idx, dtype=np.int64)
    cdef const double[:] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] sums = np.zeros((window_count, n_vars))
    cdef cnp.ndarray[double, ndim=2] counts = np.zeros((window_count, n_vars))
    cdef double[:, :] s = sums
    cdef double[:, :] c = counts
    cdef double end = start + window_minutes * window_count
    cdef Py_ssize_t k, slot, n = m.shape[0]
    for k in range(n):
        if isnan(val[k]) or m[k] < start or m[k] > end:
            continue
        slot = <Py_ssize_t> floor((m[k] - start) / window_minutes)
        if slot >= window_count:
            slot = window_count - 1
        s[slot, v[k]] += val[k]
        c[slot, v[k]] += 1.0
    cdef Py_ssize_t t, f
    for t in range(window_count):
        for f in range(n_vars):
            if c[t, f] > 0:
                s[t, f] = s[t, f] / c[t, f]
            else:
                s[t, f] = NAN
    return sums


def fill_missing(x, fallback):
    cdef cnp.ndarray[double, ndim=2] out = np.array(x, dtype=np.float64, copy=True, order="C")
    cdef const double[:] fb = np.ascontiguousarray(np.broadcast_to(
        np.asarray(fallback, dtype=np.float64), (out.shape[1],)))
    cdef double[:, :] o = out
    cdef Py_ssize_t t, f, n_steps = out.shape[0], n_vars = out.shape[1]
    for f in range(n_vars):
        for t in range(1, n_steps):
            if isnan(o[t, f]):
                o[t, f] = o[t - 1, f]
        for t in range(n_steps - 2, -1, -1):
            if isnan(o[t, f]):
                o[t, f] = o[t + 1, f]
        for t in range(n_steps):
            if isnan(o[t, f]):
                o[t, f] = fb[f]
    return out


def ranked_auc(scores_desc, labels):
    cdef const double[:] s = np.ascontiguousarray(scores_desc, dtype=np.float64)
    cdef const double[:] y = np.ascontiguousarray(labels, dtype=np.float64)
    cdef Py_ssize_t k, n = s.shape[0]
    cdef double n_pos = 0.0, n_neg = 0.0
    for k in range(n):
        n_pos += y[k]
    n_neg = n - n_pos
    cdef double tp = 0.0, fp = 0.0, p_g = 0.0, n_g = 0.0
    cdef double roc = 0.0, ap = 0.0
    for k in range(n):
        if y[k] > 0.5:
            tp += 1.0
            p_g += 1.0
        else:
            fp += 1.0
            n_g += 1.0
        if k == n - 1 or s[k + 1] != s[k]:
            roc += p_g * (n_neg - fp) + 0.5 * p_g * n_g
            ap += p_g * (tp / (tp + fp))
            p_g = 0.0
            n_g = 0.0
    auroc = roc / (n_pos * n_neg) if (n_pos > 0 and n_neg > 0) else float("nan")
    avg = ap / n_pos if n_pos > 0 else float("nan")
    return auroc, avg, int(n_pos), int(n_neg)


cdef inline double _logistic(double z) nogil:
    cdef double ez
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


def lstm_cell_forward(z, c_prev):
    cdef const double[:, :] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, :] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t b, j, batch = cp.shape[0], hidden = cp.shape[1]
    gates_arr = np.empty((batch, 4 * hidden))
    c_arr = np.empty((batch, hidden))
    tc_arr = np.empty((batch, hidden))
    h_arr = np.empty((batch, hidden))
    cdef double[:, :] gates = gates_arr
    cdef double[:, :] c = c_arr
    cdef double[:, :] tc = tc_arr
    cdef double[:, :] h = h_arr
    cdef double gi, gf, gg, go
    with nogil:
        for b in range(batch):
            for j in range(hidden):
                gi = _logistic(zz[b, j])
                gf = _logistic(zz[b, hidden + j])
                gg = tanh(zz[b, 2 * hidden + j])
                go = _logistic(zz[b, 3 * hidden + j])
                gates[b, j] = gi
                gates[b, hidden + j] = gf
                gates[b, 2 * hidden + j] = gg
                gates[b, 3 * hidden + j] = go
                c[b, j] = gf * cp[b, j] + gi * gg
                tc[b, j] = tanh(c[b, j])
                h[b, j] = go * tc[b, j]
    return gates_arr, c_arr, tc_arr, h_arr


def lstm_cell_backward(dh, dc, gates, c_prev, tanh_c):
    cdef const double[:, :] dhv = np.ascontiguousarray(dh, dtype=np.float64)
    cdef const double[:, :] dcv = np.ascontiguousarray(dc, dtype=np.float64)
    cdef const double[:, :] gv = np.ascontiguousarray(gates, dtype=np.float64)
    cdef const double[:, :] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef const double[:, :] tc = np.ascontiguousarray(tanh_c, dtype=np.float64)
    cdef Py_ssize_t b, j, batch = cp.shape[0], hidden = cp.shape[1]
    dz_arr = np.empty((batch, 4 * hidden))
    dcp_arr = np.empty((batch, hidden))
    cdef double[:, :] dz = dz_arr
    cdef double[:, :] dcp = dcp_arr
    cdef double gi, gf, gg, go, tot
    with nogil:
        for b in range(batch):
            for j in range(hidden):
                gi = gv[b, j]
                gf = gv[b, hidden + j]
                gg = gv[b, 2 * hidden + j]
                go = gv[b, 3 * hidden + j]
                tot = dcv[b, j] + dhv[b, j] * go * (1.0 - tc[b, j] * tc[b, j])
                dz[b, j] = tot * gg * gi * (1.0 - gi)
                dz[b, hidden + j] = tot * cp[b, j] * gf * (1.0 - gf)
                dz[b, 2 * hidden + j] = tot * gi * (1.0 - gg * gg)
                dz[b, 3 * hidden + j] = dhv[b, j] * tc[b, j] * go * (1.0 - go)
                dcp[b, j] = tot * gf
    return dz_arr, dcp_arr
