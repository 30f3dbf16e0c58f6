"""Pure-numpy convolution kernels (stride-tricks + tensordot).

Fallback backend for machines without numba; selected with
SKETCHFILL_BACKEND=numpy. Same call signatures as _kernels_numba.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pad_hw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _windows(xp, stride, kh, kw):
    # view of all kh x kw patches at the given stride: [N, C, OH, OW, kh, kw]
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp, (n, c, oh, ow, kh, kw), (sn, sc, sh * stride, sw * stride, sh, sw)
    )


def conv2d_forward(x, w, stride, pad):
    xp = _pad_hw(x, pad)
    win = _windows(xp, stride, w.shape[2], w.shape[3])
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, OH, OW, Cout
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_grad_kernel(gy, x, stride, pad, kh, kw):
    xp = _pad_hw(x, pad)
    win = _windows(xp, stride, kh, kw)
    # windows beyond gy's spatial extent never contributed to the forward pass
    win = win[:, :, : gy.shape[2], : gy.shape[3]]
    return np.ascontiguousarray(np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3])))


def _pad_or_crop(a, axis, left, right):
    if left < 0:
        a = a[(slice(None),) * axis + (slice(-left, None),)]
        left = 0
    if right < 0:
        a = a[(slice(None),) * axis + (slice(None, right),)]
        right = 0
    if left or right:
        spec = [(0, 0)] * a.ndim
        spec[axis] = (left, right)
        a = np.pad(a, spec)
    return a


def conv2d_grad_input(gy, w, stride, pad, h, wd):
    n, cout, oh, ow = gy.shape
    _, cin, kh, kw = w.shape
    # dilate by the stride, then correlate with the flipped, transposed kernel;
    # the right padding is widened so rows a strided forward read past the
    # nominal transpose size still receive their gradient
    zh, zw = (oh - 1) * stride + 1, (ow - 1) * stride + 1
    z = np.zeros((n, cout, zh, zw))
    z[:, :, ::stride, ::stride] = gy
    eh = h - ((oh - 1) * stride - 2 * pad + kh)
    ew = wd - ((ow - 1) * stride - 2 * pad + kw)
    if eh < 0 or ew < 0:
        raise ValueError(
            f"target {h}x{wd} smaller than transpose support for gy {gy.shape}"
        )
    z = _pad_or_crop(z, 2, kh - 1 - pad, kh - 1 - pad + eh)
    z = _pad_or_crop(z, 3, kw - 1 - pad, kw - 1 - pad + ew)
    wk = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(z, wk, 1, 0)
