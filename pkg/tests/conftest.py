import numpy as np
import pytest


def conv_oracle(x, w, b, stride, pad):
    """Quadruple-loop direct cross-correlation, the independent reference."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for bb in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = b[co]
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                hh = i * stride - pad + u
                                ww = j * stride - pad + v
                                if 0 <= hh < h and 0 <= ww < wd:
                                    acc += x[bb, ci, hh, ww] * w[co, ci, u, v]
                    out[bb, co, i, j] = acc
    return out


def conv_transpose_oracle(y, w, b, stride, pad):
    """Scatter-add adjoint of conv_oracle."""
    n, cout, oh, ow = y.shape
    _, cin, kh, kw = w.shape
    h = (oh - 1) * stride - 2 * pad + kh
    wd = (ow - 1) * stride - 2 * pad + kw
    out = np.zeros((n, cin, h, wd))
    for bb in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                hh = i * stride - pad + u
                                ww = j * stride - pad + v
                                if 0 <= hh < h and 0 <= ww < wd:
                                    out[bb, ci, hh, ww] += y[bb, co, i, j] * w[co, ci, u, v]
    out += b[None, :, None, None]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
