"""Generator backbone and critics.

Encoder: stride-2 channel-doubling convs over image+mask. A structure block
modulates every encoder feature with the user controls. A texture branch
mirrors the decoder's transposed convs from the bottleneck and is added
residually into the decoder, which concatenates the structure features level
by level and squashes the final 3-channel map to [0,1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ConvParams,
    ShapeError,
    Tensor,
    add,
    bilinear_resize,
    concat_batch,
    concat_channels,
    conv2d,
    conv_init,
    conv_transpose2d,
    conv_transpose_init,
    crop_hw,
    leaky_relu,
    reshape,
    sigmoid,
    slice_batch,
    spatial_mean,
)
from .structure import ControlBundle, SGBConfig, StructureParams, build_structure_block, sgb_forward

LEAKY_SLOPE = 0.2
LOCAL_PATCH = 32  # critic input size for the hole crop
MAX_INJECTIONS = 6


@dataclass
class BackboneConfig:
    levels: int = 4
    base_channels: int = 16
    image_size: int = 64

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        n = self.image_size
        if n < 1 or n & (n - 1):
            raise ValueError(f"image_size must be a power of two, got {n}")
        if n < 2**self.levels:
            raise ValueError(
                f"image_size {n} too small for {self.levels} halving levels"
            )

    def channels(self, level: int) -> int:
        """Encoder width at 1-based level; doubles per level, capped at 8x base."""
        if level == 0:
            return self.base_channels
        return min(self.base_channels * 2 ** (level - 1), 8 * self.base_channels)

    def injection_count(self, level: int) -> int:
        """Rounds per structure block: deepest gets 1, shallower levels more."""
        return min(MAX_INJECTIONS, max(1, self.levels - (level - 1)))

    def color_width(self, level: int) -> int:
        return max(4, self.channels(level) // 2)


@dataclass
class EditInput:
    image: Tensor  # [N,3,H,W], hole pixels zeroed
    mask: Tensor  # [N,1,H,W] binary, 1 = hole
    sketch: Tensor  # [N,1,H,W]
    color: Tensor  # [N,3,H,W]
    seed: int = 0

    def __post_init__(self):
        if np.any(self.image.data * self.mask.data != 0.0):
            raise ValueError("hole pixels must be zeroed before encoding")

    @classmethod
    def create(cls, image, mask, sketch=None, color=None, seed: int = 0) -> "EditInput":
        """Wrap raw [C,H,W] or [N,C,H,W] arrays, zeroing hole content."""

        def as_batch(a, channels):
            arr = np.asarray(a, dtype=np.float64)
            if arr.ndim == 3:
                arr = arr[None]
            if arr.ndim != 4 or arr.shape[1] != channels:
                raise ShapeError(f"expected [N,{channels},H,W], got {arr.shape}")
            return arr

        img = as_batch(image, 3)
        m = as_batch(mask, 1)
        hw = img.shape[2:]
        if sketch is None:
            sketch = np.zeros((img.shape[0], 1) + hw)
        if color is None:
            color = np.zeros((img.shape[0], 3) + hw)
        return cls(
            image=Tensor(img * (1.0 - m)),
            mask=Tensor(m),
            sketch=Tensor(as_batch(sketch, 1)),
            color=Tensor(as_batch(color, 3)),
            seed=seed,
        )

    def controls(self) -> ControlBundle:
        n, _, h, w = self.mask.shape
        rng = np.random.default_rng([self.seed, h, w])
        return ControlBundle(
            sketch=self.sketch,
            color=self.color,
            mask=self.mask,
            noise=Tensor(rng.standard_normal((n, 1, h, w))),
            seed=self.seed,
        )


@dataclass
class GeneratorParams:
    encoder: list[ConvParams]  # levels convs, 4x4 stride 2
    blocks: list[StructureParams]  # one per level
    bottleneck_fuse: ConvParams  # 2*ch(L) -> ch(L), 3x3
    decoder_up: list[ConvParams]  # levels transposed convs, 4x4 stride 2
    decoder_fuse: list[ConvParams]  # levels-1 convs, 3x3
    texture_up: list[ConvParams]  # same shapes as decoder_up
    out_proj: ConvParams  # base -> 3, 3x3


@dataclass
class DiscriminatorParams:
    convs: list[ConvParams]  # four 4x4 stride-2 stages
    head: ConvParams  # 1x1 to a scalar score channel


def build_generator(config: BackboneConfig, seed: int = 0) -> GeneratorParams:
    rng = np.random.default_rng(seed)
    lv = config.levels
    encoder, blocks = [], []
    in_ch = 4  # image + mask
    for level in range(1, lv + 1):
        out_ch = config.channels(level)
        encoder.append(conv_init(rng, in_ch, out_ch, 4))
        blocks.append(
            build_structure_block(
                out_ch, config.color_width(level), config.injection_count(level), rng=rng
            )
        )
        in_ch = out_ch
    bottom = config.channels(lv)
    bottleneck_fuse = conv_init(rng, 2 * bottom, bottom, 3)
    decoder_up, decoder_fuse, texture_up = [], [], []
    for j in range(lv):
        cin, cout = config.channels(lv - j), config.channels(lv - j - 1)
        decoder_up.append(conv_transpose_init(rng, cin, cout, 4))
        if j < lv - 1:
            decoder_fuse.append(conv_init(rng, 2 * cout, cout, 3))
    for j in range(lv):
        cin, cout = config.channels(lv - j), config.channels(lv - j - 1)
        texture_up.append(conv_transpose_init(rng, cin, cout, 4))
    out_proj = conv_init(rng, config.base_channels, 3, 3)
    return GeneratorParams(
        encoder, blocks, bottleneck_fuse, decoder_up, decoder_fuse, texture_up, out_proj
    )


def build_discriminator(base_channels: int = 16, seed: int = 0) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    convs, in_ch = [], 3
    for stage in range(4):
        out_ch = base_channels * 2**stage
        convs.append(conv_init(rng, in_ch, out_ch, 4))
        in_ch = out_ch
    return DiscriminatorParams(convs=convs, head=conv_init(rng, in_ch, 1, 1))


def encode(inp: EditInput, params: GeneratorParams, config: BackboneConfig) -> list[Tensor]:
    if inp.image.shape[2] != config.image_size or inp.image.shape[3] != config.image_size:
        raise ShapeError(
            f"input is {inp.image.shape[2]}x{inp.image.shape[3]}, "
            f"config wants {config.image_size}x{config.image_size}"
        )
    cur = concat_channels([inp.image, inp.mask])
    feats = []
    for conv in params.encoder:
        cur = leaky_relu(conv2d(cur, conv.w, conv.b, 2, 1), LEAKY_SLOPE)
        feats.append(cur)
    return feats


def texture_branch(bottleneck: Tensor, params: GeneratorParams) -> list[Tensor]:
    """Mirror the decoder's transposed convs from the bottleneck."""
    feats, cur = [], bottleneck
    for ct in params.texture_up:
        cur = leaky_relu(conv_transpose2d(cur, ct.w, ct.b, 2, 1), LEAKY_SLOPE)
        feats.append(cur)
    return feats


def decode(
    bottleneck: Tensor,
    block_feats: list[Tensor],
    texture_feats: list[Tensor],
    params: GeneratorParams,
    config: BackboneConfig,
) -> Tensor:
    lv = config.levels
    if len(block_feats) != lv or len(texture_feats) != lv:
        raise ShapeError(
            f"expected {lv} structure and texture features, got "
            f"{len(block_feats)} and {len(texture_feats)}"
        )
    d = leaky_relu(
        conv2d(
            concat_channels([bottleneck, block_feats[-1]]),
            params.bottleneck_fuse.w,
            params.bottleneck_fuse.b,
            1,
            1,
        ),
        LEAKY_SLOPE,
    )
    for j in range(lv):
        up = params.decoder_up[j]
        d = conv_transpose2d(d, up.w, up.b, 2, 1)
        if d.shape != texture_feats[j].shape:
            raise ShapeError(
                f"texture feature {texture_feats[j].shape} misaligned with "
                f"decoder level {d.shape}"
            )
        d = add(d, texture_feats[j])
        if j < lv - 1:
            skip = block_feats[lv - 2 - j]
            fuse = params.decoder_fuse[j]
            d = leaky_relu(conv2d(concat_channels([d, skip]), fuse.w, fuse.b, 1, 1), LEAKY_SLOPE)
    return sigmoid(conv2d(d, params.out_proj.w, params.out_proj.b, 1, 1))


def generator_forward(
    inp: EditInput,
    params: GeneratorParams,
    config: BackboneConfig,
    return_states: bool = False,
):
    feats = encode(inp, params, config)
    raw = inp.controls()
    block_feats, states = [], []
    for level, (f, block) in enumerate(zip(feats, params.blocks), start=1):
        cfg = SGBConfig(level, config.injection_count(level), config.color_width(level))
        out, state = sgb_forward(f, raw, cfg, block, return_state=True)
        block_feats.append(out)
        states.append(state)
    tex = texture_branch(feats[-1], params)
    image = decode(feats[-1], block_feats, tex, params, config)
    if return_states:
        return image, states
    return image


def mask_bbox(mask_plane: np.ndarray) -> tuple[int, int, int, int]:
    """Tight bounding box (r0, r1, c0, c1), end-exclusive, of a binary plane."""
    rows = np.flatnonzero(mask_plane.any(axis=1))
    cols = np.flatnonzero(mask_plane.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask is empty, no bounding box")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def discriminate(
    image: Tensor, mask: Tensor, which: str, params: DiscriminatorParams
) -> Tensor:
    """Critic scores [N,1]; `local` scores the resized tight hole crop."""
    if which not in ("global", "local"):
        raise ValueError(f"which must be 'global' or 'local', got {which!r}")
    x = image
    if which == "local":
        crops = []
        for i in range(image.shape[0]):
            r0, r1, c0, c1 = mask_bbox(mask.data[i, 0])
            patch = crop_hw(slice_batch(image, i), r0, r1, c0, c1)
            crops.append(bilinear_resize(patch, LOCAL_PATCH, LOCAL_PATCH))
        x = concat_batch(crops)
    for conv in params.convs:
        x = leaky_relu(conv2d(x, conv.w, conv.b, 2, 1), LEAKY_SLOPE)
    pooled = spatial_mean(x)
    score = conv2d(pooled, params.head.w, params.head.b, 1, 0)
    return reshape(score, (image.shape[0], 1))
