import os
import subprocess
import sys

import numpy as np
import pytest

from knowrare import _kernels_py as py
from knowrare import kernels

compiled = pytest.importorskip("knowrare._kernels")


def test_default_backend_is_compiled():
    if os.environ.get("KNOWRARE_PURE_PYTHON"):
        pytest.skip("pure-python fallback forced")
    assert kernels.BACKEND == "cython"


def test_env_forces_fallback():
    code = "from knowrare import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env={**os.environ, "KNOWRARE_PURE_PYTHON": "1"})
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("seed", range(5))
def test_window_means_parity(seed):
    rng = np.random.default_rng(seed)
    n = 200
    minutes = rng.uniform(-30, 1500, n)
    minutes[:3] = [0.0, 1440.0, 60.0]
    values = rng.normal(size=n)
    values[rng.random(n) < 0.1] = np.nan
    var = rng.integers(4, size=n)
    a = py.window_means(minutes, var, values, 0.0, 60.0, 24, 4)
    b = compiled.window_means(minutes, var, values, 0.0, 60.0, 24, 4)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0, equal_nan=True)


@pytest.mark.parametrize("seed", range(5))
def test_fill_missing_parity(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(24, 6))
    x[rng.random(x.shape) < 0.5] = np.nan
    x[:, 0] = np.nan
    fb = rng.normal(size=6)
    np.testing.assert_array_equal(py.fill_missing(x, fb), compiled.fill_missing(x, fb))


@pytest.mark.parametrize("seed", range(5))
def test_ranked_auc_parity(seed):
    rng = np.random.default_rng(seed)
    s = np.sort(rng.integers(0, 20, 150).astype(float))[::-1].copy()
    y = (rng.random(150) < 0.3).astype(float)
    a, b = py.ranked_auc(s, y), compiled.ranked_auc(s, y)
    assert a[2:] == b[2:]
    np.testing.assert_allclose(a[:2], b[:2], rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_cell_parity(seed):
    rng = np.random.default_rng(seed)
    z, c = 3 * rng.normal(size=(4, 20)), rng.normal(size=(4, 5))
    fa, fb = py.lstm_cell_forward(z, c), compiled.lstm_cell_forward(z, c)
    for u, v in zip(fa, fb):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)
    dh, dc = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    ba = py.lstm_cell_backward(dh, dc, fa[0], c, fa[2])
    bb = compiled.lstm_cell_backward(dh, dc, fb[0], c, fb[2])
    for u, v in zip(ba, bb):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)
