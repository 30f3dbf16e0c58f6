"""Backend selection for the convolution hot loops.

SKETCHFILL_BACKEND controls which implementation runs:
  auto   use numba if importable, else pure numpy (default)
  numba  require the jitted kernels
  numpy  force the stride-tricks fallback

All three entry points take and return contiguous float64 arrays; the two
backends agree to floating-point roundoff (summation order differs).
"""
import os

import numpy as np

_CHOICE = os.environ.get("SKETCHFILL_BACKEND", "auto").strip().lower()
if _CHOICE not in {"auto", "numba", "numpy"}:
    raise RuntimeError(
        f"SKETCHFILL_BACKEND must be auto, numba or numpy, got {_CHOICE!r}"
    )

if _CHOICE == "numpy":
    from . import _kernels_numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise RuntimeError("SKETCHFILL_BACKEND=numba but numba is not importable")
        from . import _kernels_numpy as _impl

        BACKEND = "numpy"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, stride, pad):
    return _impl.conv2d_forward(_c(x), _c(w), stride, pad)


def conv2d_grad_input(gy, w, stride, pad, h, wd):
    return _impl.conv2d_grad_input(_c(gy), _c(w), stride, pad, h, wd)


def conv2d_grad_kernel(gy, x, stride, pad, kh, kw):
    return _impl.conv2d_grad_kernel(_c(gy), _c(x), stride, pad, kh, kw)
