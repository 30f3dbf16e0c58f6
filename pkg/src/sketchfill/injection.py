"""Spatially-adaptive control injection.

Input features are standardized per sample and channel, then modulated
element-wise by gamma/beta maps predicted from the control signal by a small
conv trunk (shared 3x3 + leaky_relu, then parallel 3x3 heads).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ConvParams,
    ShapeError,
    Tensor,
    add,
    add_const,
    conv2d,
    conv_init,
    div,
    leaky_relu,
    mul,
    spatial_mean,
    sqrt,
    square,
    sub,
)

DEFAULT_EPSILON = 1e-5
LEAKY_SLOPE = 0.2


@dataclass
class InjectionParams:
    shared: ConvParams  # control -> hidden, 3x3
    gamma: ConvParams  # hidden -> feature channels, 3x3
    beta: ConvParams  # hidden -> feature channels, 3x3
    epsilon: float = DEFAULT_EPSILON


def default_hidden(feature_channels: int) -> int:
    return max(feature_channels, 16)


def build_injection(
    feature_channels: int,
    control_channels: int,
    hidden_channels: int,
    seed: int | None = None,
    rng=None,
    epsilon: float = DEFAULT_EPSILON,
) -> InjectionParams:
    """Seeded, deterministic injection parameters."""
    if min(feature_channels, control_channels, hidden_channels) < 1:
        raise ValueError("all channel counts must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    return InjectionParams(
        shared=conv_init(rng, control_channels, hidden_channels, 3),
        gamma=conv_init(rng, hidden_channels, feature_channels, 3),
        beta=conv_init(rng, hidden_channels, feature_channels, 3),
        epsilon=epsilon,
    )


def inject(f_in: Tensor, control: Tensor, params: InjectionParams) -> Tensor:
    """gamma(L) * (F - mu_c) / sqrt(sigma_c^2 + eps) + beta(L), per sample."""
    if f_in.data.ndim != 4 or control.data.ndim != 4:
        raise ShapeError(
            f"inject expects 4-d tensors, got {f_in.shape} and {control.shape}"
        )
    if f_in.shape[0] != control.shape[0] or f_in.shape[2:] != control.shape[2:]:
        raise ShapeError(
            f"control {control.shape} not spatially aligned with features {f_in.shape}"
        )
    mu = spatial_mean(f_in)
    centered = sub(f_in, mu)
    var = spatial_mean(square(centered))
    core = div(centered, sqrt(add_const(var, params.epsilon)))

    hidden = leaky_relu(
        conv2d(control, params.shared.w, params.shared.b, 1, 1), LEAKY_SLOPE
    )
    gamma_map = conv2d(hidden, params.gamma.w, params.gamma.b, 1, 1)
    beta_map = conv2d(hidden, params.beta.w, params.beta.b, 1, 1)
    if gamma_map.shape[1] != f_in.shape[1]:
        raise ShapeError(
            f"gamma head emits {gamma_map.shape[1]} channels for "
            f"{f_in.shape[1]}-channel features"
        )
    return add(mul(gamma_map, core), beta_map)
