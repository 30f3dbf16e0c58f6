"""Training objective: pixel L1, perceptual, style, adversarial, and TV terms.

The perceptual/style feature stack is a fixed, seeded five-stage conv pyramid
(strides 1,2,4,8,16 relative to the input); its weights never train.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ConvParams,
    ShapeError,
    Tensor,
    absval,
    add,
    add_const,
    conv2d,
    conv_init,
    gram as gram_op,
    leaky_relu,
    log_clamped,
    mean_all,
    mul,
    neg,
    scale,
    sigmoid,
    sub,
    sum_all,
)

LEAKY_SLOPE = 0.2
LOG_FLOOR = 1e-12

_STAGE_WIDTHS = (8, 16, 32, 48, 64)
_STAGE_STRIDES = (1, 2, 2, 2, 2)


@dataclass(frozen=True)
class FeatureExtractor:
    stages: tuple[ConvParams, ...]

    @classmethod
    def build(cls, seed: int = 0) -> "FeatureExtractor":
        rng = np.random.default_rng(seed)
        stages, in_ch = [], 3
        for width in _STAGE_WIDTHS:
            p = conv_init(rng, in_ch, width, 3)
            p.w.requires_grad = False
            p.b.requires_grad = False
            stages.append(p)
            in_ch = width
        return cls(stages=tuple(stages))

    def features(self, x: Tensor) -> list[Tensor]:
        feats, cur = [], x
        for p, stride in zip(self.stages, _STAGE_STRIDES):
            cur = leaky_relu(conv2d(cur, p.w, p.b, stride, 1), LEAKY_SLOPE)
            feats.append(cur)
        return feats


@dataclass(frozen=True)
class LossWeights:
    re: float = 1.0
    prec: float = 0.05
    style: float = 250.0
    tv: float = 0.1
    adv: float = 0.1

    def __post_init__(self):
        for name in ("re", "prec", "style", "tv", "adv"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    re: float
    prec: float
    style: float
    adv: float
    tv: float
    total: float


def _check_same_shape(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def pixel_loss(i_out: Tensor, i_gt: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(i_out, i_gt, "pixel_loss")
    return mean_all(absval(sub(i_out, i_gt)))


def perceptual_loss(i_out: Tensor, i_gt: Tensor, fx: FeatureExtractor) -> Tensor:
    _check_same_shape(i_out, i_gt, "perceptual_loss")
    total = None
    for fa, fb in zip(fx.features(i_out), fx.features(i_gt)):
        term = mean_all(absval(sub(fa, fb)))
        total = term if total is None else add(total, term)
    return total


def gram(features: Tensor) -> Tensor:
    """Normalized channel Gram matrix [N,C,C] of a feature map."""
    return gram_op(features)


def style_loss(i_out: Tensor, i_gt: Tensor, fx: FeatureExtractor) -> Tensor:
    _check_same_shape(i_out, i_gt, "style_loss")
    total = None
    for fa, fb in zip(fx.features(i_out), fx.features(i_gt)):
        term = mean_all(absval(sub(gram_op(fa), gram_op(fb))))
        total = term if total is None else add(total, term)
    return total


def adversarial_loss(real_scores: Tensor, fake_scores: Tensor, role: str) -> Tensor:
    """Relativistic average loss on critic scores.

    Each score is compared against the mean of the opposing batch through a
    sigmoid; the generator role drives fakes above reals, the discriminator
    role the mirror image. Logs are floored at 1e-12.
    """
    if role not in ("generator", "discriminator"):
        raise ValueError(f"role must be generator or discriminator, got {role!r}")
    for name, t in (("real", real_scores), ("fake", fake_scores)):
        if t.data.size < 1:
            raise ShapeError(f"{name} scores are empty")
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"{name} scores contain non-finite values")
    d_real = sigmoid(sub(real_scores, mean_all(fake_scores)))
    d_fake = sigmoid(sub(fake_scores, mean_all(real_scores)))

    def one_minus(t):
        return add_const(neg(t), 1.0)

    if role == "generator":
        a = mean_all(log_clamped(one_minus(d_real), LOG_FLOOR))
        b = mean_all(log_clamped(d_fake, LOG_FLOOR))
    else:
        a = mean_all(log_clamped(d_real, LOG_FLOOR))
        b = mean_all(log_clamped(one_minus(d_fake), LOG_FLOOR))
    return neg(add(a, b))


def tv_loss(i_out: Tensor, mask: Tensor) -> Tensor:
    """Absolute forward differences between pixel pairs fully inside the hole,
    summed and divided by the element count of i_out."""
    if i_out.data.ndim != 4 or mask.data.ndim != 4:
        raise ShapeError(f"tv_loss expects 4-d tensors, got {i_out.shape}, {mask.shape}")
    if i_out.shape[2:] != mask.shape[2:] or i_out.shape[0] != mask.shape[0]:
        raise ShapeError(
            f"mask {mask.shape} not spatially aligned with image {i_out.shape}"
        )
    m = mask.data
    n_total = i_out.data.size
    pair_h = Tensor(m[:, :, :, 1:] * m[:, :, :, :-1])
    pair_v = Tensor(m[:, :, 1:, :] * m[:, :, :-1, :])
    d = i_out.data  # shapes only
    dh = sub(
        _shift(i_out, cols=(1, d.shape[3])), _shift(i_out, cols=(0, d.shape[3] - 1))
    )
    dv = sub(
        _shift(i_out, rows=(1, d.shape[2])), _shift(i_out, rows=(0, d.shape[2] - 1))
    )
    term_h = sum_all(mul(absval(dh), pair_h))
    term_v = sum_all(mul(absval(dv), pair_v))
    return scale(add(term_h, term_v), 1.0 / n_total)


def _shift(t: Tensor, rows=None, cols=None) -> Tensor:
    from .autodiff import crop_hw

    n, c, h, w = t.shape
    r0, r1 = rows if rows else (0, h)
    c0, c1 = cols if cols else (0, w)
    return crop_hw(t, r0, r1, c0, c1)


def weighted_total(
    re: Tensor, prec: Tensor, style: Tensor, tv: Tensor, adv: Tensor, weights: LossWeights
) -> Tensor:
    """Differentiable weighted sum; same accumulation order as total_loss."""
    total = scale(re, weights.re)
    total = add(total, scale(prec, weights.prec))
    total = add(total, scale(style, weights.style))
    total = add(total, scale(tv, weights.tv))
    total = add(total, scale(adv, weights.adv))
    return total


def _as_float(v) -> float:
    f = v.item() if isinstance(v, Tensor) else float(v)
    return f


def total_loss(re, prec, style, tv, adv, weights: LossWeights | None = None) -> LossReport:
    if weights is None:
        weights = LossWeights()
    re, prec, style, tv, adv = map(_as_float, (re, prec, style, tv, adv))
    total = weights.re * re
    total = total + weights.prec * prec
    total = total + weights.style * style
    total = total + weights.tv * tv
    total = total + weights.adv * adv
    if not math.isfinite(total):
        raise ValueError("total loss is not finite")
    return LossReport(re=re, prec=prec, style=style, adv=adv, tv=tv, total=total)
