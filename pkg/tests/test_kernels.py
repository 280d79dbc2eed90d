"""Backend parity and boundary behaviour for the pooling/upsampling kernels."""

import numpy as np
import pytest

from tricot.kernels import _numpy

try:
    from tricot.kernels import _numba
except ImportError:
    _numba = None

needs_numba = pytest.mark.skipif(_numba is None, reason="numba unavailable")


def random_case(rng):
    b = int(rng.integers(1, 4))
    t = int(rng.integers(6, 40))
    c = int(rng.integers(1, 6))
    k = int(rng.choice([4, 5, 6]))
    x = rng.normal(size=(b, t, c))
    mask = rng.random((b, t)) > 0.35
    return x, mask, k


@needs_numba
def test_pool_forward_parity():
    rng = np.random.default_rng(21)
    for _ in range(40):
        x, mask, k = random_case(rng)
        o1, c1, s1 = _numpy.masked_mean_pool_fwd(x, mask, k)
        o2, c2, s2 = _numba.masked_mean_pool_fwd(x, mask, k)
        np.testing.assert_allclose(o1, o2, rtol=1e-12, atol=1e-13)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_array_equal(s1, s2)


@needs_numba
def test_pool_backward_parity():
    rng = np.random.default_rng(22)
    for _ in range(40):
        x, mask, k = random_case(rng)
        _, counts, src = _numpy.masked_mean_pool_fwd(x, mask, k)
        g = rng.normal(size=(x.shape[0], _numpy.pool_len(x.shape[1], k), x.shape[2]))
        g1 = _numpy.masked_mean_pool_bwd(g, mask, k, counts, src, x.shape[1])
        g2 = _numba.masked_mean_pool_bwd(g, mask, k, counts, src, x.shape[1])
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-13)


@needs_numba
def test_upsample_parity():
    rng = np.random.default_rng(23)
    for _ in range(40):
        b, l, c = int(rng.integers(1, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 5))
        t = int(rng.integers(1, 40))
        x = rng.normal(size=(b, l, c))
        np.testing.assert_allclose(_numpy.linear_upsample_fwd(x, t),
                                   _numba.linear_upsample_fwd(x, t),
                                   rtol=1e-12, atol=1e-13)
        g = rng.normal(size=(b, t, c))
        np.testing.assert_allclose(_numpy.linear_upsample_bwd(g, l),
                                   _numba.linear_upsample_bwd(g, l),
                                   rtol=1e-12, atol=1e-13)


def test_last_window_covers_remainder():
    # stride 5 over T=13: windows [0:5), [5:10), [10:13)
    x = np.arange(13.0).reshape(1, 13, 1)
    mask = np.ones((1, 13), dtype=bool)
    out, counts, src = _numpy.masked_mean_pool_fwd(x, mask, 5)
    assert out.shape == (1, 3, 1)
    np.testing.assert_array_equal(counts[0], [5, 5, 3])
    np.testing.assert_allclose(out[0, :, 0], [2.0, 7.0, 11.0])


def test_empty_window_copies_left():
    x = np.arange(12.0).reshape(1, 12, 1)
    mask = np.ones((1, 12), dtype=bool)
    mask[0, 4:8] = False
    out, counts, src = _numpy.masked_mean_pool_fwd(x, mask, 4)
    assert counts[0, 1] == 0
    assert src[0, 1] == 0
    np.testing.assert_allclose(out[0, 1, 0], out[0, 0, 0])


def test_leading_empty_windows_are_zero():
    x = np.ones((1, 12, 2))
    mask = np.zeros((1, 12), dtype=bool)
    mask[0, 8:] = True
    out, counts, src = _numpy.masked_mean_pool_fwd(x, mask, 4)
    np.testing.assert_array_equal(out[0, :2], 0.0)
    np.testing.assert_array_equal(src[0], [-1, -1, 2])
    np.testing.assert_array_equal(out[0, 2], 1.0)


def test_pool_gradient_skips_masked_frames():
    rng = np.random.default_rng(31)
    x = rng.normal(size=(1, 10, 2))
    mask = np.ones((1, 10), dtype=bool)
    mask[0, 3] = False
    _, counts, src = _numpy.masked_mean_pool_fwd(x, mask, 5)
    g = rng.normal(size=(1, 2, 2))
    gx = _numpy.masked_mean_pool_bwd(g, mask, 5, counts, src, 10)
    np.testing.assert_array_equal(gx[0, 3], 0.0)


def test_upsample_single_point_broadcasts():
    x = np.array([[[2.5, -1.0]]])
    out = _numpy.linear_upsample_fwd(x, 6)
    assert out.shape == (1, 6, 2)
    np.testing.assert_array_equal(out[0], np.tile([2.5, -1.0], (6, 1)))


def test_backend_selector():
    import tricot.kernels as kernels
    assert kernels.backend() in ("numba", "numpy")
    out = kernels.masked_mean_pool_fwd(np.ones((1, 8, 1)), np.ones((1, 8), dtype=bool), 4)[0]
    np.testing.assert_array_equal(out, 1.0)


def test_numpy_backend_env_flag():
    import subprocess, sys
    code = ("import tricot.kernels as k; print(k.backend())")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"TRICOT_KERNELS": "numpy", "PATH": "/usr/bin:/bin:/usr/local/bin"},
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
