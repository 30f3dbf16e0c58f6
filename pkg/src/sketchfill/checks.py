"""Tiered finite-difference suites: primitive ops, structure blocks, full model."""
from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    absval,
    bilinear_resize,
    broadcast_channel,
    channel_mean,
    concat_channels,
    conv2d,
    conv_transpose2d,
    crop_hw,
    gram,
    leaky_relu,
    log_clamped,
    mean_all,
    named_tensors,
    sigmoid,
    spatial_mean,
    sqrt,
    square,
    sub,
)
from .gradcheck import grad_check
from .injection import build_injection, inject
from .losses import (
    FeatureExtractor,
    LossWeights,
    adversarial_loss,
    perceptual_loss,
    pixel_loss,
    style_loss,
    tv_loss,
    weighted_total,
)
from .network import BackboneConfig, build_discriminator, build_generator, discriminate, generator_forward
from .structure import (
    ControlBundle,
    SGBConfig,
    build_structure_block,
    color_step,
    fusion_step,
    sgb_forward,
    sketch_init,
    sketch_step,
)
from .trainer import TrainSettings, make_sample

TOLERANCE = 1e-4


def _t(rng, *shape, grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


def _params_of(obj):
    return [t for _, t in named_tensors(obj)]


def suite_ops(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    results = {}

    x = _t(rng, 1, 2, 5, 5)
    w = _t(rng, 3, 2, 3, 3)
    b = _t(rng, 3)
    results["conv2d_s1p1"] = grad_check(
        lambda p: mean_all(square(conv2d(p[0], p[1], p[2], 1, 1))), [x, w, b]
    )
    results["conv2d_s2p1"] = grad_check(
        lambda p: mean_all(square(conv2d(p[0], p[1], p[2], 2, 1))), [x, w, b]
    )
    xt = _t(rng, 1, 3, 4, 4)
    wt = _t(rng, 3, 2, 4, 4)
    bt = _t(rng, 2)
    results["conv_transpose2d_s2p1"] = grad_check(
        lambda p: mean_all(square(conv_transpose2d(p[0], p[1], p[2], 2, 1))), [xt, wt, bt]
    )
    a = _t(rng, 2, 3, 4, 4)
    results["sigmoid"] = grad_check(lambda p: mean_all(sigmoid(p[0])), [a])
    results["leaky_relu"] = grad_check(lambda p: mean_all(leaky_relu(p[0], 0.2)), [a])
    results["abs_sqrt_square"] = grad_check(
        lambda p: mean_all(sqrt(square(absval(p[0])) + Tensor(np.ones(1)))), [a]
    )
    results["log_clamped"] = grad_check(
        lambda p: mean_all(log_clamped(sigmoid(p[0]))), [a]
    )
    one_ch = _t(rng, 2, 1, 4, 4)
    results["channel_mix"] = grad_check(
        lambda p: mean_all(
            concat_channels(
                [channel_mean(p[0]), broadcast_channel(p[1], 2), crop_hw(p[0], 0, 4, 0, 4)]
            )
        ),
        [a, one_ch],
    )
    results["spatial_mean"] = grad_check(
        lambda p: mean_all(square(sub(p[0], spatial_mean(p[0])))), [a]
    )
    results["bilinear_resize"] = grad_check(
        lambda p: mean_all(square(bilinear_resize(p[0], 7, 3))), [a]
    )
    results["gram"] = grad_check(lambda p: mean_all(square(gram(p[0]))), [a])

    fx = FeatureExtractor.build(seed)
    ia = _t(rng, 1, 3, 8, 8)
    ib = _t(rng, 1, 3, 8, 8)
    results["pixel_loss"] = grad_check(lambda p: pixel_loss(p[0], p[1]), [ia, ib])
    results["perceptual_loss"] = grad_check(
        lambda p: perceptual_loss(p[0], p[1], fx), [ia, ib], max_coords=32
    )
    results["style_loss"] = grad_check(
        lambda p: style_loss(p[0], p[1], fx), [ia, ib], max_coords=32
    )
    mask = Tensor((rng.random((1, 1, 8, 8)) < 0.6).astype(np.float64))
    results["tv_loss"] = grad_check(lambda p: tv_loss(p[0], mask), [ia])
    sr = _t(rng, 4, 1)
    sf = _t(rng, 4, 1)
    results["adversarial_generator"] = grad_check(
        lambda p: adversarial_loss(p[0], p[1], "generator"), [sr, sf]
    )
    results["adversarial_discriminator"] = grad_check(
        lambda p: adversarial_loss(p[0], p[1], "discriminator"), [sr, sf]
    )
    return results


def _toy_controls(rng, n, h, w, seed=0) -> ControlBundle:
    sketch = Tensor((rng.random((n, 1, h, w)) < 0.2).astype(np.float64))
    color = Tensor(rng.random((n, 3, h, w)))
    mask = Tensor((rng.random((n, 1, h, w)) < 0.5).astype(np.float64))
    noise = Tensor(rng.standard_normal((n, 1, h, w)))
    return ControlBundle(sketch, color, mask, noise, seed)


def suite_block(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    results = {}

    inj = build_injection(4, 2, 16, seed=seed)
    f = _t(rng, 1, 4, 6, 6)
    ctl = _t(rng, 1, 2, 6, 6)
    results["inject"] = grad_check(
        lambda p: mean_all(square(inject(p[0], p[1], inj))), [f, ctl] + _params_of(inj),
        max_coords=32,
    )

    block = build_structure_block(4, 4, 2, seed=seed + 1)
    controls = _toy_controls(rng, 1, 8, 8, seed=seed)
    enc = _t(rng, 1, 4, 8, 8)
    fs0 = _t(rng, 1, 1, 8, 8)
    fc0 = _t(rng, 1, 4, 8, 8)
    rnd = block.refine_rounds[0]
    results["sketch_init"] = grad_check(
        lambda p: mean_all(square(sketch_init(p[0], controls, block))),
        [enc] + _params_of(block.init_inj),
        max_coords=32,
    )
    results["sketch_step"] = grad_check(
        lambda p: mean_all(square(sketch_step(p[0], controls, rnd))),
        [fs0] + _params_of(rnd.sketch_conv) + _params_of(rnd.sketch_inj),
        max_coords=32,
    )
    results["color_step"] = grad_check(
        lambda p: mean_all(square(color_step(p[0], p[1], rnd))),
        [fc0, fs0] + _params_of(rnd.color_conv),
        max_coords=32,
    )
    results["fusion_step"] = grad_check(
        lambda p: mean_all(square(fusion_step(p[0], p[1], p[2], block.fusion_injs[0]))),
        [enc, fs0, fc0] + _params_of(block.fusion_injs[0]),
        max_coords=32,
    )
    cfg = SGBConfig(scale_index=1, n_injections=2, color_width=4)
    results["sgb_forward"] = grad_check(
        lambda p: mean_all(square(sgb_forward(p[0], controls, cfg, block))),
        [enc, controls.sketch, controls.color] + _params_of(block),
        max_coords=16,
    )
    return results


def suite_model(seed: int = 0, max_coords: int = 24) -> dict[str, float]:
    """Whole objective on a 16x16, 2-level toy generator plus both critics."""
    config = BackboneConfig(levels=2, base_channels=4, image_size=16)
    settings = TrainSettings(config=config, seed=seed, n_shapes=2)
    scene, inp = make_sample(settings, 0)
    gen = build_generator(config, seed)
    disc_g = build_discriminator(4, seed + 1)
    disc_l = build_discriminator(4, seed + 2)
    fx = FeatureExtractor.build(seed + 3)
    weights = LossWeights()
    i_gt = Tensor(scene.image[None])

    def closure(_params):
        i_out = generator_forward(inp, gen, config)
        re = pixel_loss(i_out, i_gt)
        prec = perceptual_loss(i_out, i_gt, fx)
        sty = style_loss(i_out, i_gt, fx)
        tv = tv_loss(i_out, inp.mask)
        terms = []
        for which, disc in (("global", disc_g), ("local", disc_l)):
            r = discriminate(i_gt, inp.mask, which, disc)
            fk = discriminate(i_out, inp.mask, which, disc)
            terms.append(adversarial_loss(r, fk, "generator"))
        from .autodiff import add, scale

        adv = scale(add(terms[0], terms[1]), 0.5)
        return weighted_total(re, prec, sty, tv, adv, weights)

    params = _params_of(gen) + _params_of(disc_g) + _params_of(disc_l)
    err = grad_check(closure, params, max_coords=max_coords, seed=seed)
    return {"generator_with_losses": err}


def run_tier(name: str, seed: int = 0) -> dict[str, float]:
    if name == "ops":
        return suite_ops(seed)
    if name == "block":
        return suite_block(seed)
    if name == "model":
        return suite_model(seed)
    raise ValueError(f"unknown tier {name!r}; expected ops, block or model")
