"""Finite-difference verification of reverse-mode gradients."""

import numpy as np

from adstext.autodiff import Tensor, backward
from adstext.errors import NumericsError


def grad_check(f, wrt, h: float = 1e-4) -> float:
    """Compare reverse-mode gradients of the scalar f() against central differences.

    f is re-evaluated with single coordinates of the `wrt` tensors displaced
    by +/-h; the analytic gradient comes from one backward pass at the
    unperturbed point. Returns the worst relative error over all coordinates,
    with denominator max(|analytic|, |numeric|, 1e-8).
    """
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    for t in tensors:
        t.requires_grad = True
        t.grad = None

    out = f()
    if out.data.shape != ():
        raise NumericsError(f"grad_check requires a scalar function, got shape {out.data.shape}")
    backward(out)

    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        gflat = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
