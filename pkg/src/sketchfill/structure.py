"""Structure blocks on the skip connections.

Each block couples three branches at one feature scale. The sketch branch
re-injects the sketch control n times in total: once to seed F_s^0 from the
averaged encoder feature, then n-1 refinement rounds. The color branch
propagates under a (1 - sigmoid(sketch)) gate, and the fusion branch runs n
injections, round i consuming the branch features of round i-1. Everything
computed feeds the output; no branch round is dangling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ConvParams,
    ShapeError,
    Tensor,
    add_const,
    channel_mean,
    concat_channels,
    conv2d,
    conv_init,
    mul,
    neg,
    sigmoid,
)
from .injection import InjectionParams, build_injection, default_hidden, inject


@dataclass
class ControlBundle:
    """Per-scale control signals; all maps share one spatial size."""

    sketch: Tensor  # [N,1,h,w] in [0,1]
    color: Tensor  # [N,3,h,w] in [0,1], zero outside strokes
    mask: Tensor  # [N,1,h,w] binary, 1 = hole
    noise: Tensor  # [N,1,h,w] seeded standard normal
    seed: int = 0

    def __post_init__(self):
        hw = self.sketch.shape[2:]
        for name in ("color", "mask", "noise"):
            t = getattr(self, name)
            if t.shape[2:] != hw or t.shape[0] != self.sketch.shape[0]:
                raise ShapeError(
                    f"control {name} shape {t.shape} misaligned with sketch "
                    f"{self.sketch.shape}"
                )
        m = self.mask.data
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("mask must be exactly binary")


@dataclass
class SGBConfig:
    scale_index: int  # 1 = shallowest skip
    n_injections: int
    color_width: int


@dataclass
class RefineRound:
    sketch_conv: ConvParams  # 1 -> 1, 3x3
    sketch_inj: InjectionParams
    color_conv: ConvParams  # Cc -> Cc, 3x3


@dataclass
class StructureParams:
    init_inj: InjectionParams  # seeds F_s^0 from the averaged encoder feature
    color_proj: ConvParams  # 3 -> Cc, 1x1
    fusion_injs: list[InjectionParams] = field(default_factory=list)  # n
    refine_rounds: list[RefineRound] = field(default_factory=list)  # n - 1

    @property
    def n_injections(self) -> int:
        return len(self.fusion_injs)


@dataclass
class SGBState:
    """Round-indexed branch features.

    sketch_feats[i] and color_feats[i] hold F_s^i / F_c^i for i in 0..n-1;
    fused[i] holds F^i for i in 0..n with fused[0] the encoder feature.
    """

    sketch_feats: list[Tensor]
    color_feats: list[Tensor]
    fused: list[Tensor]


def build_structure_block(
    feature_channels: int, color_width: int, n_rounds: int, seed: int | None = None, rng=None
) -> StructureParams:
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be >= 1, got {n_rounds}")
    if rng is None:
        rng = np.random.default_rng(seed)
    hidden_sketch = default_hidden(1)
    hidden_fuse = default_hidden(feature_channels)
    fusion_injs = [
        build_injection(feature_channels, color_width, hidden_fuse, rng=rng)
        for _ in range(n_rounds)
    ]
    refine_rounds = [
        RefineRound(
            sketch_conv=conv_init(rng, 1, 1, 3),
            sketch_inj=build_injection(1, 2, hidden_sketch, rng=rng),
            color_conv=conv_init(rng, color_width, color_width, 3),
        )
        for _ in range(n_rounds - 1)
    ]
    return StructureParams(
        init_inj=build_injection(1, 2, hidden_sketch, rng=rng),
        color_proj=conv_init(rng, 3, color_width, 1),
        fusion_injs=fusion_injs,
        refine_rounds=refine_rounds,
    )


def _noise_for(seed: int, h: int, w: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([seed, h, w])
    return rng.standard_normal((n, 1, h, w))


def resize_controls(raw: ControlBundle, target_hw) -> ControlBundle:
    """Bring image-resolution controls down to one feature scale.

    Sketch and color are area-averaged (sketch re-binarized at 0.05), the
    mask is max-pooled so covered pixels stay holes, and the noise map is
    drawn fresh at the target size from the bundle seed.
    """
    th, tw = target_hw
    n, _, h, w = raw.sketch.shape
    if h % th or w % tw:
        raise ShapeError(f"target {th}x{tw} does not divide source {h}x{w}")
    fh, fw = h // th, w // tw
    if fh & (fh - 1) or fw & (fw - 1):
        raise ShapeError(f"resize factor {fh}x{fw} is not a power of two")
    noise = Tensor(_noise_for(raw.seed, th, tw, n))
    if fh == 1 and fw == 1:
        return ControlBundle(raw.sketch, raw.color, raw.mask, noise, raw.seed)

    def block(a, reduce):
        blocks = a.reshape(a.shape[0], a.shape[1], th, fh, tw, fw)
        return reduce(blocks, axis=(3, 5))

    sketch = (block(raw.sketch.data, np.mean) >= 0.05).astype(np.float64)
    color = block(raw.color.data, np.mean)
    mask = block(raw.mask.data, np.max)
    return ControlBundle(Tensor(sketch), Tensor(color), Tensor(mask), noise, raw.seed)


def _control_map(controls: ControlBundle) -> Tensor:
    # 2-channel injection control: sketch next to hole-masked noise
    return concat_channels([controls.sketch, mul(controls.noise, controls.mask)])


def sketch_init(f_encoder: Tensor, controls: ControlBundle, params: StructureParams) -> Tensor:
    """F_s^0: inject the control into the channel-averaged encoder feature."""
    return inject(channel_mean(f_encoder), _control_map(controls), params.init_inj)


def sketch_step(f_s_prev: Tensor, controls: ControlBundle, rnd: RefineRound) -> Tensor:
    """F_s^i: convolve the previous sketch feature and re-inject the control."""
    refined = conv2d(f_s_prev, rnd.sketch_conv.w, rnd.sketch_conv.b, 1, 1)
    return inject(refined, _control_map(controls), rnd.sketch_inj)


def color_step(f_c_prev: Tensor, f_s_prev: Tensor, rnd: RefineRound) -> Tensor:
    """(1 - sigmoid(sketch feature)) gates a 3x3 propagation convolution."""
    if f_c_prev.shape[2:] != f_s_prev.shape[2:]:
        raise ShapeError(
            f"color {f_c_prev.shape} and sketch {f_s_prev.shape} spatial mismatch"
        )
    gate = add_const(neg(sigmoid(f_s_prev)), 1.0)
    return mul(gate, conv2d(f_c_prev, rnd.color_conv.w, rnd.color_conv.b, 1, 1))


def fusion_step(
    f_prev: Tensor, f_s_prev: Tensor, f_c_prev: Tensor, inj: InjectionParams
) -> Tensor:
    """Amplify along sketch lines (factor in [1,2]) then inject color features."""
    amp = add_const(sigmoid(f_s_prev), 1.0)
    return inject(mul(f_prev, amp), f_c_prev, inj)


def color_init(color: Tensor, params: StructureParams) -> Tensor:
    """F_c^0: project the 3-channel color control to the branch width."""
    return conv2d(color, params.color_proj.w, params.color_proj.b, 1, 0)


def sgb_forward(
    f_encoder: Tensor,
    raw_controls: ControlBundle,
    config: SGBConfig,
    params: StructureParams,
    return_state: bool = False,
):
    if config.n_injections < 1:
        raise ValueError("n_injections must be >= 1")
    if params.n_injections != config.n_injections:
        raise ShapeError(
            f"block has {params.n_injections} fusion rounds, "
            f"config wants {config.n_injections}"
        )
    controls = resize_controls(raw_controls, f_encoder.shape[2:])
    fs = [sketch_init(f_encoder, controls, params)]
    fc = [color_init(controls.color, params)]
    fu = [f_encoder]
    n = config.n_injections
    for i in range(n):
        s_prev, c_prev, f_prev = fs[-1], fc[-1], fu[-1]
        fu.append(fusion_step(f_prev, s_prev, c_prev, params.fusion_injs[i]))
        if i < n - 1:
            rnd = params.refine_rounds[i]
            fs.append(sketch_step(s_prev, controls, rnd))
            fc.append(color_step(c_prev, s_prev, rnd))
    if return_state:
        return fu[-1], SGBState(fs, fc, fu)
    return fu[-1]
