"""Numpy fallback for the hot kernels.

Mirrors the signatures and semantics of the compiled core (_core.pyx).
All arrays are float64; row-oriented kernels take 2-D C-contiguous input.
"""

import numpy as np


def softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, dy):
    # dx = y * (dy - sum(dy * y))
    dot = (y * dy).sum(axis=1, keepdims=True)
    return y * (dy - dot)


def log_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def log_softmax_rows_backward(y, dy):
    return dy - np.exp(y) * dy.sum(axis=1, keepdims=True)


def layernorm_rows(x, gamma, beta, eps):
    """Returns (out, xhat, inv_std); xhat/inv_std are reused by backward."""
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gamma + beta, xhat, inv_std.ravel()


def layernorm_rows_backward(dy, xhat, inv_std, gamma):
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    mean_dxhat = dxhat.mean(axis=1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std[:, None]
    return dx, dgamma, dbeta


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x):
    # tanh approximation
    u = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(x, dy):
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One fused AdamW step, in place on p, m, v. Decay decoupled from the moments."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * weight_decay * p
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def min_image_distance_matrix(frac, cell):
    """Pairwise minimum distances over the 27 lattice-image offsets.

    frac: (N, 3) fractional coordinates wrapped into [0, 1); cell: (3, 3)
    row-vector lattice matrix. Returns an (N, N) symmetric matrix with a
    zero diagonal.
    """
    n = frac.shape[0]
    diff = frac[:, None, :] - frac[None, :, :]
    best = np.full((n, n), np.inf)
    for a in (-1.0, 0.0, 1.0):
        for b in (-1.0, 0.0, 1.0):
            for c in (-1.0, 0.0, 1.0):
                cart = (diff + np.array([a, b, c])) @ cell
                d2 = (cart**2).sum(axis=2)
                np.minimum(best, d2, out=best)
    np.fill_diagonal(best, 0.0)
    return np.sqrt(best)
