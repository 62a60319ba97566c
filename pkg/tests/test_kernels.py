"""Cross-backend agreement between the compiled core and the numpy fallback."""

import numpy as np
import pytest

from adstext import kernels
from adstext.kernels import _ref

try:
    from adstext.kernels import _core
except ImportError:
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernel core not built")


def test_backend_reported():
    assert kernels.BACKEND in ("c", "py")


@needs_core
def test_softmax_agreement():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(17, 23))
    np.testing.assert_allclose(_core.softmax_rows(x), _ref.softmax_rows(x), rtol=1e-13)
    y = _ref.softmax_rows(x)
    dy = rng.normal(size=x.shape)
    np.testing.assert_allclose(
        _core.softmax_rows_backward(y, dy), _ref.softmax_rows_backward(y, dy), rtol=1e-12, atol=1e-14
    )


@needs_core
def test_log_softmax_agreement():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(9, 31)) * 4
    np.testing.assert_allclose(_core.log_softmax_rows(x), _ref.log_softmax_rows(x), rtol=1e-13)
    y = _ref.log_softmax_rows(x)
    dy = rng.normal(size=x.shape)
    np.testing.assert_allclose(
        _core.log_softmax_rows_backward(y, dy),
        _ref.log_softmax_rows_backward(y, dy),
        rtol=1e-12,
        atol=1e-14,
    )


@needs_core
def test_layernorm_agreement():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(11, 19))
    gamma = rng.normal(size=19)
    beta = rng.normal(size=19)
    out_c, xhat_c, inv_c = _core.layernorm_rows(x, gamma, beta, 1e-5)
    out_r, xhat_r, inv_r = _ref.layernorm_rows(x, gamma, beta, 1e-5)
    np.testing.assert_allclose(out_c, out_r, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(xhat_c, xhat_r, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(inv_c, inv_r, rtol=1e-12)
    dy = rng.normal(size=x.shape)
    for c, r in zip(
        _core.layernorm_rows_backward(dy, xhat_r, inv_r, gamma),
        _ref.layernorm_rows_backward(dy, xhat_r, inv_r, gamma),
    ):
        np.testing.assert_allclose(c, r, rtol=1e-11, atol=1e-13)


@needs_core
def test_gelu_agreement():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 7, 8)) * 3
    dy = rng.normal(size=x.shape)
    # tanh saturation makes the tail values ~1e-11 with poor relative
    # agreement between libm and numpy; compare with an absolute floor.
    np.testing.assert_allclose(_core.gelu(x), _ref.gelu(x), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(
        _core.gelu_backward(x, dy), _ref.gelu_backward(x, dy), rtol=1e-10, atol=1e-10
    )


@needs_core
def test_adamw_agreement():
    rng = np.random.default_rng(4)
    p1 = rng.normal(size=64)
    g = rng.normal(size=64)
    m1, v1 = np.zeros(64), np.zeros(64)
    p2, m2, v2 = p1.copy(), m1.copy(), v1.copy()
    for t in range(1, 6):
        _core.adamw_update(p1, g, m1, v1, t, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        _ref.adamw_update(p2, g, m2, v2, t, 1e-3, 0.9, 0.999, 1e-8, 0.01)
    np.testing.assert_allclose(p1, p2, rtol=1e-12)
    np.testing.assert_allclose(m1, m2, rtol=1e-12)
    np.testing.assert_allclose(v1, v2, rtol=1e-12)


@needs_core
def test_min_image_agreement():
    rng = np.random.default_rng(5)
    for _ in range(10):
        cell = np.diag(rng.uniform(8, 14, size=3))
        cell[1, 0] = rng.uniform(-2, 2)
        cell[2, 1] = rng.uniform(-2, 2)
        frac = rng.random((12, 3))
        np.testing.assert_allclose(
            _core.min_image_distance_matrix(frac, cell),
            _ref.min_image_distance_matrix(frac, cell),
            rtol=1e-12,
        )


def test_softmax_exact_half():
    out = kernels.softmax_rows(np.array([[0.0, 0.0]]))
    np.testing.assert_array_equal(out, [[0.5, 0.5]])


def test_env_override_selects_fallback():
    import subprocess
    import sys

    code = "from adstext import kernels; print(kernels.BACKEND)"
    result = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "ADSTEXT_KERNELS": "py"},
    )
    assert result.stdout.strip() == "py"
