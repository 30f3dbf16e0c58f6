"""Numba-jitted direct convolution kernels.

Default backend. Plain quadruple loops with bounds checks standing in for
zero padding; single-threaded and deterministic.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    hi0 = i * stride - pad
                    wj0 = j * stride - pad
                    for ci in range(cin):
                        for u in range(kh):
                            hu = hi0 + u
                            if hu < 0 or hu >= h:
                                continue
                            for v in range(kw):
                                wv = wj0 + v
                                if 0 <= wv < wd:
                                    acc += x[b, ci, hu, wv] * w[co, ci, u, v]
                    out[b, co, i, j] = acc
    return out


@njit(cache=True)
def conv2d_grad_input(gy, w, stride, pad, h, wd):
    n, cout, oh, ow = gy.shape
    _, cin, kh, kw = w.shape
    gx = np.zeros((n, cin, h, wd))
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    g = gy[b, co, i, j]
                    hi0 = i * stride - pad
                    wj0 = j * stride - pad
                    for ci in range(cin):
                        for u in range(kh):
                            hu = hi0 + u
                            if hu < 0 or hu >= h:
                                continue
                            for v in range(kw):
                                wv = wj0 + v
                                if 0 <= wv < wd:
                                    gx[b, ci, hu, wv] += g * w[co, ci, u, v]
    return gx


@njit(cache=True)
def conv2d_grad_kernel(gy, x, stride, pad, kh, kw):
    n, cout, oh, ow = gy.shape
    _, cin, h, wd = x.shape
    gw = np.zeros((cout, cin, kh, kw))
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    g = gy[b, co, i, j]
                    hi0 = i * stride - pad
                    wj0 = j * stride - pad
                    for ci in range(cin):
                        for u in range(kh):
                            hu = hi0 + u
                            if hu < 0 or hu >= h:
                                continue
                            for v in range(kw):
                                wv = wj0 + v
                                if 0 <= wv < wd:
                                    gw[co, ci, u, v] += g * x[b, ci, hu, wv]
    return gw
