"""Backend kernels against the brute-force oracle, and cross-backend agreement."""
import numpy as np
import pytest

from sketchfill import _kernels_numpy
from sketchfill import kernels
from conftest import conv_oracle

try:
    from sketchfill import _kernels_numba

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_forward_matches_oracle(rng, stride, pad):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    y = kernels.conv2d_forward(x, w, stride, pad)
    ref = conv_oracle(x, w, np.zeros(4), stride, pad)
    assert np.abs(y - ref).max() < 1e-12


def test_grad_input_is_adjoint(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    y = kernels.conv2d_forward(x, w, 2, 1)
    gy = rng.standard_normal(y.shape)
    gx = kernels.conv2d_grad_input(gy, w, 2, 1, 6, 6)
    # <conv(x), gy> == <x, adjoint(gy)>
    assert abs((y * gy).sum() - (x * gx).sum()) < 1e-10


def test_grad_kernel_matches_fd(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    gy = rng.standard_normal(kernels.conv2d_forward(x, w, 2, 2).shape)
    gw = kernels.conv2d_grad_kernel(gy, x, 2, 2, 3, 3)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 0)]:
        wp = w.copy()
        wp[idx] += h
        wm = w.copy()
        wm[idx] -= h
        fp = (kernels.conv2d_forward(x, wp, 2, 2) * gy).sum()
        fm = (kernels.conv2d_forward(x, wm, 2, 2) * gy).sum()
        assert abs(gw[idx] - (fp - fm) / (2 * h)) < 1e-8


def test_deterministic(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    a = kernels.conv2d_forward(x, w, 2, 1)
    b = kernels.conv2d_forward(x.copy(), w.copy(), 2, 1)
    assert a.tobytes() == b.tobytes()


@pytest.mark.skipif(not HAS_NUMBA, reason="numba backend unavailable")
@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1)])
def test_backends_agree(rng, stride, pad):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    fa = _kernels_numba.conv2d_forward(x, w, stride, pad)
    fb = _kernels_numpy.conv2d_forward(x, w, stride, pad)
    assert np.abs(fa - fb).max() < 1e-12
    gy = rng.standard_normal(fa.shape)
    ga = _kernels_numba.conv2d_grad_input(gy, w, stride, pad, 8, 8)
    gb = _kernels_numpy.conv2d_grad_input(gy, w, stride, pad, 8, 8)
    assert np.abs(ga - gb).max() < 1e-12
    ka = _kernels_numba.conv2d_grad_kernel(gy, x, stride, pad, 3, 3)
    kb = _kernels_numpy.conv2d_grad_kernel(gy, x, stride, pad, 3, 3)
    assert np.abs(ka - kb).max() < 1e-12
