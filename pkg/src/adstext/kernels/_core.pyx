# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core.

Each function mirrors the numpy fallback in _ref.py: same signatures, same
semantics, float64 throughout. Fused loops avoid the temporaries the numpy
versions allocate.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, tanh


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(cols):
            out[i, j] = exp(x[i, j] - m)
            s += out[i, j]
        for j in range(cols):
            out[i, j] /= s
    return out_arr


def softmax_rows_backward(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t rows = y.shape[0], cols = y.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += y[i, j] * dy[i, j]
        for j in range(cols):
            out[i, j] = y[i, j] * (dy[i, j] - dot)
    return out_arr


def log_softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(cols):
            s += exp(x[i, j] - m)
        s = log(s)
        for j in range(cols):
            out[i, j] = x[i, j] - m - s
    return out_arr


def log_softmax_rows_backward(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t rows = y.shape[0], cols = y.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(rows):
        s = 0.0
        for j in range(cols):
            s += dy[i, j]
        for j in range(cols):
            out[i, j] = dy[i, j] - exp(y[i, j]) * s
    return out_arr


def layernorm_rows(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    xhat_arr = np.empty((rows, cols), dtype=np.float64)
    inv_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, d
    for i in range(rows):
        mu = 0.0
        for j in range(cols):
            mu += x[i, j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = x[i, j] - mu
            var += d * d
        var /= cols
        inv[i] = 1.0 / sqrt(var + eps)
        for j in range(cols):
            xhat[i, j] = (x[i, j] - mu) * inv[i]
            out[i, j] = xhat[i, j] * gamma[j] + beta[j]
    return out_arr, xhat_arr, inv_arr


def layernorm_rows_backward(double[:, ::1] dy, double[:, ::1] xhat,
                            double[::1] inv_std, double[::1] gamma):
    cdef Py_ssize_t rows = dy.shape[0], cols = dy.shape[1]
    dx_arr = np.empty((rows, cols), dtype=np.float64)
    dgamma_arr = np.zeros(cols, dtype=np.float64)
    dbeta_arr = np.zeros(cols, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, dxh
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            dxh = dy[i, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
        m1 /= cols
        m2 /= cols
        for j in range(cols):
            dx[i, j] = (dy[i, j] * gamma[j] - m1 - xhat[i, j] * m2) * inv_std[i]
    return dx_arr, dgamma_arr, dbeta_arr


cdef double _GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double _GELU_A = 0.044715


def gelu(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out_arr.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v
    for i in range(n):
        v = xv[i]
        ov[i] = 0.5 * v * (1.0 + tanh(_GELU_C * (v + _GELU_A * v * v * v)))
    return out_arr


def gelu_backward(x, dy):
    x_arr = np.ascontiguousarray(x, dtype=np.float64)
    dy_arr = np.ascontiguousarray(dy, dtype=np.float64)
    out_arr = np.empty_like(x_arr)
    cdef double[::1] xv = x_arr.ravel()
    cdef double[::1] dyv = dy_arr.ravel()
    cdef double[::1] ov = out_arr.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v, t, du
    for i in range(n):
        v = xv[i]
        t = tanh(_GELU_C * (v + _GELU_A * v * v * v))
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
        ov[i] = dyv[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return out_arr


def adamw_update(p, g, m, v, long t, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    if not (p.flags["C_CONTIGUOUS"] and m.flags["C_CONTIGUOUS"] and v.flags["C_CONTIGUOUS"]):
        raise ValueError("adamw_update requires contiguous parameter and moment arrays")
    g_arr = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[::1] pv = p.ravel()
    cdef double[::1] gv = g_arr.ravel()
    cdef double[::1] mv = m.ravel()
    cdef double[::1] vv = v.ravel()
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double mhat, vhat
    for i in range(n):
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
        mhat = mv[i] / bc1
        vhat = vv[i] / bc2
        pv[i] -= lr * weight_decay * pv[i]
        pv[i] -= lr * mhat / (sqrt(vhat) + eps)


def min_image_distance_matrix(double[:, ::1] frac, double[:, ::1] cell):
    cdef Py_ssize_t n = frac.shape[0]
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef int a, b, c
    cdef double d0, d1, d2, cx, cy, cz, d2sum, best
    for i in range(n):
        for j in range(i + 1, n):
            d0 = frac[i, 0] - frac[j, 0]
            d1 = frac[i, 1] - frac[j, 1]
            d2 = frac[i, 2] - frac[j, 2]
            best = -1.0
            for a in range(-1, 2):
                for b in range(-1, 2):
                    for c in range(-1, 2):
                        cx = (d0 + a) * cell[0, 0] + (d1 + b) * cell[1, 0] + (d2 + c) * cell[2, 0]
                        cy = (d0 + a) * cell[0, 1] + (d1 + b) * cell[1, 1] + (d2 + c) * cell[2, 1]
                        cz = (d0 + a) * cell[0, 2] + (d1 + b) * cell[1, 2] + (d2 + c) * cell[2, 2]
                        d2sum = cx * cx + cy * cy + cz * cz
                        if best < 0.0 or d2sum < best:
                            best = d2sum
            out[i, j] = sqrt(best)
            out[j, i] = out[i, j]
    return out_arr
