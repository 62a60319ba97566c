#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times each kernel at shapes the encoder actually uses, plus one end-to-end
encoder forward/backward under the currently selected backend. Run:

    python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from adstext.kernels import _ref

try:
    from adstext.kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def kernel_cases(rng):
    """(name, callable-factory) pairs; factory takes the backend module."""
    x_sm = rng.normal(size=(160, 64))  # (heads*L, L)-ish softmax rows
    y_sm = _ref.softmax_rows(x_sm)
    dy_sm = rng.normal(size=x_sm.shape)
    x_ln = rng.normal(size=(64, 128))
    gamma = rng.normal(size=128)
    beta = rng.normal(size=128)
    _, xhat, inv_std = _ref.layernorm_rows(x_ln, gamma, beta, 1e-5)
    dy_ln = rng.normal(size=x_ln.shape)
    x_ge = rng.normal(size=(64, 512))
    dy_ge = rng.normal(size=x_ge.shape)
    p = rng.normal(size=65536)
    g = rng.normal(size=65536)
    frac = rng.random((64, 3))
    cell = np.diag(rng.uniform(8, 14, size=3))
    cell[1, 0] = 1.3
    cell[2, 1] = -0.8

    def adamw(mod):
        pp, mm, vv = p.copy(), np.zeros_like(p), np.zeros_like(p)
        return lambda: mod.adamw_update(pp, g, mm, vv, 1, 1e-3, 0.9, 0.999, 1e-8, 0.01)

    return [
        ("softmax_rows (160x64)", lambda mod: lambda: mod.softmax_rows(x_sm)),
        ("softmax_backward", lambda mod: lambda: mod.softmax_rows_backward(y_sm, dy_sm)),
        ("log_softmax_rows", lambda mod: lambda: mod.log_softmax_rows(x_sm)),
        ("layernorm_rows (64x128)", lambda mod: lambda: mod.layernorm_rows(x_ln, gamma, beta, 1e-5)),
        ("layernorm_backward", lambda mod: lambda: mod.layernorm_rows_backward(dy_ln, xhat, inv_std, gamma)),
        ("gelu (64x512)", lambda mod: lambda: mod.gelu(x_ge)),
        ("gelu_backward", lambda mod: lambda: mod.gelu_backward(x_ge, dy_ge)),
        ("adamw_update (64k)", adamw),
        ("min_image_distances (64 atoms)", lambda mod: lambda: mod.min_image_distance_matrix(frac, cell)),
    ]


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, factory in kernel_cases(rng):
        t_ref = timeit(factory(_ref), repeats)
        if _core is not None:
            t_core = timeit(factory(_core), repeats)
            rows.append((name, t_ref * 1e6, t_core * 1e6, t_ref / t_core))
        else:
            rows.append((name, t_ref * 1e6, None, None))
    return rows


def bench_encoder_step():
    from adstext.autodiff import Tensor, backward, mul
    from adstext.encoder import EncoderConfig, _forward, cls_embedding, init_model, regression_output
    from adstext import kernels

    config = EncoderConfig(d_model=128, n_heads=4, n_layers=4, d_ff=512,
                           max_len=64, vocab_size=200, dropout=0.0, d_graph=64)
    model = init_model(config, seed=0)
    rng = np.random.default_rng(1)
    ids = np.concatenate([[0], rng.integers(5, 200, size=47), np.full(16, 1)]).astype(np.int64)
    mask = np.arange(64) < 48

    def step():
        hidden, _ = _forward(model, ids, mask)
        residual = regression_output(model, cls_embedding(hidden)) + Tensor(-0.5)
        backward(mul(residual, residual))

    t = timeit(step, 30)
    return kernels.BACKEND, t * 1e3


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if _core is None:
        print("compiled core not built: showing numpy fallback timings only\n")

    header = f"{'kernel':<34}{'numpy [us]':>12}{'compiled [us]':>15}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, t_ref, t_core, speedup in bench_kernels(args.repeats):
        if t_core is None:
            print(f"{name:<34}{t_ref:>12.1f}{'-':>15}{'-':>9}")
        else:
            print(f"{name:<34}{t_ref:>12.1f}{t_core:>15.1f}{speedup:>8.1f}x")

    backend, ms = bench_encoder_step()
    print(f"\nencoder fwd+bwd (d=128, L=64, 4 layers), backend={backend}: {ms:.2f} ms/step")


if __name__ == "__main__":
    main()
