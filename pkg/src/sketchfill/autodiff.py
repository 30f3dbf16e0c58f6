"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and, when any operand requires gradients, records
its parents and a backward closure. backprop() walks the recorded graph in
reverse topological order, accumulating gradients into requires_grad leaves.
Everything is float64 and single-threaded; identical inputs give
bit-identical outputs.
"""
from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# pointwise and structural operations


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    return _record(
        ad / bd,
        (a, b),
        lambda g: (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(a.data * s, (a,), lambda g: (g * s,))


def add_const(a: Tensor, c: float) -> Tensor:
    return _record(a.data + float(c), (a,), lambda g: (g,))


def _sigmoid_arr(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_arr(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(a.data >= 0, 1.0, alpha)
    return _record(a.data * slope, (a,), lambda g: (g * slope,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _record(y, (a,), lambda g: (g / (2.0 * y),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def absval(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def log_clamped(a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(a, floor)); gradient is zero on the clamped plateau."""
    ad = a.data
    y = np.log(np.maximum(ad, floor))
    return _record(y, (a,), lambda g: (np.where(ad >= floor, g / np.maximum(ad, floor), 0.0),))


def sum_all(a: Tensor) -> Tensor:
    return _record(
        np.array([a.data.sum()]), (a,), lambda g: (np.full(a.shape, g.reshape(())),)
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _record(
        np.array([a.data.mean()]),
        (a,),
        lambda g: (np.full(a.shape, g.reshape(()) / n),),
    )


def spatial_mean(a: Tensor) -> Tensor:
    """Per-sample, per-channel mean over H and W: [N,C,H,W] -> [N,C,1,1]."""
    _need_4d(a, "spatial_mean")
    hw = a.shape[2] * a.shape[3]
    return _record(
        a.data.mean(axis=(2, 3), keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g / hw, a.shape).copy(),),
    )


def channel_mean(a: Tensor) -> Tensor:
    """Average across channels: [N,C,H,W] -> [N,1,H,W]."""
    _need_4d(a, "channel_mean")
    c = a.shape[1]
    return _record(
        a.data.mean(axis=1, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g / c, a.shape).copy(),),
    )


def broadcast_channel(a: Tensor, channels: int) -> Tensor:
    """Expand a single-channel map to `channels` channels."""
    _need_4d(a, "broadcast_channel")
    if a.shape[1] != 1:
        raise ShapeError(f"broadcast_channel needs C=1, got shape {a.shape}")
    n, _, h, w = a.shape
    return _record(
        np.broadcast_to(a.data, (n, channels, h, w)).copy(),
        (a,),
        lambda g: (g.sum(axis=1, keepdims=True),),
    )


def concat_channels(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one operand")
    ref = parts[0].shape
    for p in parts:
        _need_4d(p, "concat_channels")
        if p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ShapeError(
                f"concat_channels: shape {p.shape} does not match {ref} on N/H/W"
            )
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=1), parts, bw)


def crop_hw(a: Tensor, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    _need_4d(a, "crop_hw")
    n, c, h, w = a.shape
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ShapeError(f"crop_hw window [{r0}:{r1},{c0}:{c1}] outside {a.shape}")

    def bw(g):
        gx = np.zeros(a.shape)
        gx[:, :, r0:r1, c0:c1] = g
        return (gx,)

    return _record(a.data[:, :, r0:r1, c0:c1].copy(), (a,), bw)


def slice_batch(a: Tensor, i: int) -> Tensor:
    _need_4d(a, "slice_batch")

    def bw(g):
        gx = np.zeros(a.shape)
        gx[i : i + 1] = g
        return (gx,)

    return _record(a.data[i : i + 1].copy(), (a,), bw)


def concat_batch(parts) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=0), parts, bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _record(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
    )


# ---------------------------------------------------------------------------
# convolution


def _need_4d(t: Tensor, opname: str):
    if t.data.ndim != 4:
        raise ShapeError(f"{opname} expects a 4-d tensor, got shape {t.shape}")


def _check_conv_args(x, w, b, stride, padding, transpose=False):
    _need_4d(x, "conv")
    if w.data.ndim != 4:
        raise ShapeError(f"conv kernel must be 4-d, got shape {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if kh < 1 or kw < 1:
        raise ShapeError(f"kernel extent must be >= 1, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}")
    cin = w.shape[0] if transpose else w.shape[1]
    if x.shape[1] != cin:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[1]} channels, "
            f"kernel of shape {w.shape} expects {cin}"
        )
    bch = w.shape[1] if transpose else w.shape[0]
    if b.shape != (bch,):
        raise ShapeError(f"bias shape {b.shape} does not match {bch} output channels")


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[N,Cin,H,W] with w[Cout,Cin,kh,kw] plus bias."""
    _check_conv_args(x, w, b, stride, padding)
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{wd + 2 * padding}"
        )
    y = kernels.conv2d_forward(x.data, w.data, stride, padding)
    y += b.data[None, :, None, None]

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = (
            kernels.conv2d_grad_input(g, w.data, stride, padding, h, wd)
            if x.requires_grad
            else None
        )
        gw = (
            kernels.conv2d_grad_kernel(g, x.data, stride, padding, kh, kw)
            if w.requires_grad
            else None
        )
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return gx, gw, gb

    return _record(y, (x, w, b), bw)


def conv_transpose2d(
    x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of conv2d with the same kernel and hyperparameters.

    x is [N,Cout,H',W'], w is [Cout,Cin,kh,kw] (conv2d layout), output is
    [N,Cin,(H'-1)*stride-2*padding+kh, ...].
    """
    _check_conv_args(x, w, b, stride, padding, transpose=True)
    n, _, h, wd = x.shape
    _, cin, kh, kw = w.shape
    out_h = (h - 1) * stride - 2 * padding + kh
    out_w = (wd - 1) * stride - 2 * padding + kw
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"conv_transpose2d output {out_h}x{out_w} is empty for input {h}x{wd}"
        )
    y = kernels.conv2d_grad_input(x.data, w.data, stride, padding, out_h, out_w)
    y += b.data[None, :, None, None]

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = (
            kernels.conv2d_forward(g, w.data, stride, padding)
            if x.requires_grad
            else None
        )
        gw = (
            kernels.conv2d_grad_kernel(x.data, g, stride, padding, kh, kw)
            if w.requires_grad
            else None
        )
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return gx, gw, gb

    return _record(y, (x, w, b), bw)


# ---------------------------------------------------------------------------
# resampling and Gram statistics


def _linear_coeffs(n_in, n_out):
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def bilinear_resize(a: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bilinear resampling to out_h x out_w."""
    _need_4d(a, "bilinear_resize")
    n, c, h, w = a.shape
    y0, y1, ty = _linear_coeffs(h, out_h)
    x0, x1, tx = _linear_coeffs(w, out_w)
    wy0, wy1 = (1.0 - ty)[:, None], ty[:, None]
    wx0, wx1 = (1.0 - tx)[None, :], tx[None, :]
    d = a.data
    out = (
        d[:, :, y0][:, :, :, x0] * (wy0 * wx0)
        + d[:, :, y0][:, :, :, x1] * (wy0 * wx1)
        + d[:, :, y1][:, :, :, x0] * (wy1 * wx0)
        + d[:, :, y1][:, :, :, x1] * (wy1 * wx1)
    )

    def bw(g):
        gx = np.zeros(a.shape)
        ys = (y0, y0, y1, y1)
        xs = (x0, x1, x0, x1)
        ws = (wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1)
        for yi, xi, wi in zip(ys, xs, ws):
            np.add.at(
                gx,
                (slice(None), slice(None), yi[:, None], xi[None, :]),
                g * wi,
            )
        return (gx,)

    return _record(out, (a,), bw)


def gram(a: Tensor) -> Tensor:
    """Channel Gram matrix [N,C,C]: A A^T / (C*H*W) for A = unfold(a)."""
    _need_4d(a, "gram")
    n, c, h, w = a.shape
    if h * w < 1:
        raise ShapeError("gram needs at least one spatial element")
    norm = c * h * w
    flat = a.data.reshape(n, c, h * w)
    g_mat = flat @ flat.transpose(0, 2, 1) / norm

    def bw(g):
        da = (g + g.transpose(0, 2, 1)) @ flat / norm
        return (da.reshape(a.shape),)

    return _record(g_mat, (a,), bw)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents precede children


def backprop(out: Tensor):
    """Accumulate d(out)/d(leaf) into .grad of every requires_grad leaf."""
    if out.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        return
    grads = {id(out): np.ones_like(out.data)}
    for node in reversed(_toposort(out)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g


class Graph:
    """Named trainable tensors plus their gradient accumulators."""

    def __init__(self, params: dict[str, Tensor]):
        for name, p in params.items():
            if not isinstance(p, Tensor):
                raise TypeError(f"parameter {name!r} is not a Tensor")
            p.requires_grad = True
        self.params = dict(params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def backward(self, out: Tensor) -> dict[str, np.ndarray]:
        """Accumulate d(out)/d(param); unreachable parameters get zeros."""
        backprop(out)
        result = {}
        for name, p in self.params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            result[name] = p.grad
        return result


def backward(graph: Graph, out: Tensor) -> dict[str, np.ndarray]:
    return graph.backward(out)


@contextlib.contextmanager
def frozen(*graphs: Graph):
    """Temporarily clear requires_grad so forwards build no graph."""
    saved = []
    for g in graphs:
        for p in g.params.values():
            saved.append((p, p.requires_grad))
            p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad = flag


# ---------------------------------------------------------------------------
# parameter construction and traversal


@dataclass
class ConvParams:
    w: Tensor
    b: Tensor


def glorot_uniform(rng, shape, fan_in, fan_out) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape)


# biases get a small nonzero init: control maps contain exactly-zero windows,
# and a zero bias would pin pre-activations onto the leaky_relu kink there
_BIAS_SPAN = 0.05


def conv_init(rng, in_channels: int, out_channels: int, k: int) -> ConvParams:
    kk = k * k
    w = glorot_uniform(
        rng, (out_channels, in_channels, k, k), in_channels * kk, out_channels * kk
    )
    b = rng.uniform(-_BIAS_SPAN, _BIAS_SPAN, out_channels)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def conv_transpose_init(rng, in_channels: int, out_channels: int, k: int) -> ConvParams:
    kk = k * k
    w = glorot_uniform(
        rng, (in_channels, out_channels, k, k), in_channels * kk, out_channels * kk
    )
    b = rng.uniform(-_BIAS_SPAN, _BIAS_SPAN, out_channels)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def named_tensors(obj, prefix: str = ""):
    """Yield (name, Tensor) pairs from nested dataclasses/lists/dicts."""
    if isinstance(obj, Tensor):
        yield prefix, obj
        return
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            sub_prefix = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(getattr(obj, f.name), sub_prefix)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from named_tensors(obj[key], f"{prefix}.{key}" if prefix else str(key))


def graph_of(prefix_to_obj: dict) -> Graph:
    params = {}
    for prefix, obj in prefix_to_obj.items():
        for name, t in named_tensors(obj, prefix):
            params[name] = t
    return Graph(params)


# ---------------------------------------------------------------------------
# per-channel statistics (verification utility, not graph-recorded)


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray  # [N, C]
    std: np.ndarray  # [N, C], population
    epsilon: float


def channel_stats(x, epsilon: float = 1e-5) -> ChannelStats:
    """Two-pass per-sample, per-channel mean and population std."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"channel_stats expects [N,C,H,W], got {arr.shape}")
    if arr.shape[2] * arr.shape[3] < 1:
        raise ShapeError("channel_stats needs at least one spatial element")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    mean = arr.mean(axis=(2, 3))
    centered = arr - mean[:, :, None, None]
    std = np.sqrt((centered * centered).mean(axis=(2, 3)))
    return ChannelStats(mean, std, epsilon)
