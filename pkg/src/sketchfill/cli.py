"""Command-line entry point: train, edit, gradcheck, viz.

Exit codes: 0 success, 1 invalid configuration or inputs, 2 numeric
divergence during training, 3 gradient-check failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .checks import TOLERANCE, run_tier
from .losses import LossWeights
from .network import BackboneConfig, EditInput
from .ppm import ImageFormatError, read_image, write_image
from .trainer import (
    Checkpoint,
    CheckpointError,
    DivergenceError,
    TrainSettings,
    TrainState,
    compose,
    generator_forward,
    load_checkpoint,
    make_sample,
    metrics_csv,
    save_checkpoint,
    settings_from_meta,
    train,
    visualize_features,
)

_CONFIG_KEYS = {
    "levels": int,
    "base_channels": int,
    "image_size": int,
    "steps": int,
    "seed": int,
    "data_seed": int,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "dataset_size": int,
    "n_shapes": int,
    "mask_strokes": int,
    "mask_width_lo": int,
    "mask_width_hi": int,
    "mask_walk": int,
    "lambda_re": float,
    "lambda_prec": float,
    "lambda_style": float,
    "lambda_tv": float,
    "lambda_adv": float,
}


@dataclass
class RunConfig:
    command: str
    config_path: str | None = None
    seed: int | None = None
    steps: int | None = None
    out: str = "out"
    checkpoint: str | None = None
    image: str | None = None
    mask: str | None = None
    sketch: str | None = None
    color: str | None = None
    scale: str | None = None


class CliError(RuntimeError):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def parse_config_file(path) -> dict:
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    values = {}
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_KEYS:
                raise CliError(f"{path}:{ln}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](val)
            except ValueError:
                raise CliError(f"{path}:{ln}: bad value for {key}: {val!r}")
    return values


def settings_from_run(rc: RunConfig) -> TrainSettings:
    values = parse_config_file(rc.config_path) if rc.config_path else {}
    if rc.seed is not None:
        values["seed"] = rc.seed
    if rc.steps is not None:
        values["steps"] = rc.steps
    try:
        config = BackboneConfig(
            levels=values.get("levels", 4),
            base_channels=values.get("base_channels", 16),
            image_size=values.get("image_size", 64),
        )
        weights = LossWeights(
            re=values.get("lambda_re", 1.0),
            prec=values.get("lambda_prec", 0.05),
            style=values.get("lambda_style", 250.0),
            tv=values.get("lambda_tv", 0.1),
            adv=values.get("lambda_adv", 0.1),
        )
    except ValueError as exc:
        raise CliError(str(exc))
    return TrainSettings(
        config=config,
        steps=values.get("steps", 100),
        seed=values.get("seed", 1),
        data_seed=values.get("data_seed"),
        lr=values.get("lr", 2e-4),
        beta1=values.get("beta1", 0.5),
        beta2=values.get("beta2", 0.999),
        weights=weights,
        dataset_size=values.get("dataset_size", 16),
        n_shapes=values.get("n_shapes", 3),
        mask_strokes=values.get("mask_strokes", 2),
        mask_width=(values.get("mask_width_lo", 3), values.get("mask_width_hi", 7)),
        mask_walk=values.get("mask_walk", 40),
    )


def _require_file(path, what) -> str:
    if path is None:
        raise CliError(f"missing required {what}")
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}")
    return path


def cmd_train(rc: RunConfig) -> int:
    settings = settings_from_run(rc)
    os.makedirs(rc.out, exist_ok=True)
    ckpt_path = os.path.join(rc.out, "checkpoint.dflc")
    csv_path = os.path.join(rc.out, "metrics.csv")
    try:
        ckpt, metrics = train(settings)
    except DivergenceError as exc:
        save_checkpoint(ckpt_path, exc.checkpoint)
        with open(csv_path, "w") as f:
            f.write(metrics_csv(exc.metrics))
        print(f"training diverged: {exc}; last good state kept", file=sys.stderr)
        return 2
    save_checkpoint(ckpt_path, ckpt)
    with open(csv_path, "w") as f:
        f.write(metrics_csv(metrics))
    print(f"wrote {ckpt_path} and {csv_path} after {settings.steps} steps")
    return 0


def _load_checkpoint_state(path) -> TrainState:
    _require_file(path, "checkpoint")
    try:
        ckpt = load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(f"cannot load checkpoint: {exc}")
    return TrainState.from_checkpoint(ckpt)


def cmd_edit(rc: RunConfig) -> int:
    state = _load_checkpoint_state(rc.checkpoint)
    config = state.settings.config
    try:
        image = read_image(_require_file(rc.image, "--image"))
        mask = read_image(_require_file(rc.mask, "--mask"))[:1]
        sketch = read_image(rc.sketch)[:1] if rc.sketch else None
        color = read_image(rc.color) if rc.color else None
    except ImageFormatError as exc:
        raise CliError(str(exc))
    size = (config.image_size, config.image_size)
    for name, arr in (("image", image), ("mask", mask), ("sketch", sketch), ("color", color)):
        if arr is not None and arr.shape[1:] != size:
            raise CliError(
                f"{name} is {arr.shape[1]}x{arr.shape[2]}, model wants {size[0]}x{size[1]}"
            )
    mask = (mask >= 0.5).astype(np.float64)
    if sketch is not None:
        sketch = (sketch >= 0.5).astype(np.float64)
    inp = EditInput.create(image, mask, sketch, color, seed=rc.seed or 0)
    out = generator_forward(inp, state.gen, config).data[0]
    comp = compose(image, out, mask)
    os.makedirs(rc.out, exist_ok=True)
    raw_path = os.path.join(rc.out, "edit_raw.ppm")
    comp_path = os.path.join(rc.out, "edit_composited.ppm")
    write_image(raw_path, out)
    write_image(comp_path, comp)
    print(f"wrote {raw_path} and {comp_path}")
    return 0


def cmd_gradcheck(rc: RunConfig) -> int:
    tiers = [rc.scale] if rc.scale else ["ops", "block", "model"]
    seed = rc.seed if rc.seed is not None else 0
    failed = False
    for tier in tiers:
        results = run_tier(tier, seed=seed)
        width = max(len(k) for k in results)
        print(f"[{tier}] central-difference check, tolerance {TOLERANCE:g}")
        for name in sorted(results):
            err = results[name]
            ok = err <= TOLERANCE
            failed |= not ok
            print(f"  {name:<{width}}  {err:.3e}  {'ok' if ok else 'FAIL'}")
        print(f"  max relative error: {max(results.values()):.3e}")
    return 3 if failed else 0


def cmd_viz(rc: RunConfig) -> int:
    state = _load_checkpoint_state(rc.checkpoint)
    settings = state.settings
    seed = rc.seed if rc.seed is not None else 0
    scene, inp = make_sample(replace(settings, data_seed=seed), 0)
    _, states = generator_forward(inp, state.gen, settings.config, return_states=True)
    shallow = states[0]
    sketch_full = inp.sketch.data[0]
    color_maps, gray_maps = visualize_features(shallow, scene.image, sketch_full, seed=seed)
    os.makedirs(rc.out, exist_ok=True)
    n = len(color_maps)
    h, w = color_maps[0].shape[1:]
    grid = np.zeros((3, 2 * h, n * w))
    for i, (cm, gm) in enumerate(zip(color_maps, gray_maps)):
        write_image(os.path.join(rc.out, f"fused_round_{i + 1}.ppm"), cm)
        gm3 = np.repeat(gm, 3, axis=0)
        write_image(os.path.join(rc.out, f"sketch_round_{i + 1}.ppm"), gm3)
        grid[:, :h, i * w : (i + 1) * w] = cm
        grid[:, h:, i * w : (i + 1) * w] = gm3
    grid_path = os.path.join(rc.out, "feature_grid.ppm")
    write_image(grid_path, grid)
    print(f"wrote {n} fused + {n} sketch maps and {grid_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchfill")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "config" in names:
            p.add_argument("--config")
        if "seed" in names:
            p.add_argument("--seed", type=int)
        if "steps" in names:
            p.add_argument("--steps", type=int)
        if "out" in names:
            p.add_argument("--out", default="out")
        if "checkpoint" in names:
            p.add_argument("--checkpoint")

    p_train = sub.add_parser("train", help="train on synthetic scenes")
    common(p_train, "config", "seed", "steps", "out")

    p_edit = sub.add_parser("edit", help="fill holes in an image with controls")
    common(p_edit, "seed", "out", "checkpoint")
    p_edit.add_argument("--image")
    p_edit.add_argument("--mask")
    p_edit.add_argument("--sketch")
    p_edit.add_argument("--color")

    p_gc = sub.add_parser("gradcheck", help="finite-difference verification")
    p_gc.add_argument("scale", nargs="?", choices=["ops", "block", "model"])
    p_gc.add_argument("--seed", type=int)

    p_viz = sub.add_parser("viz", help="per-round feature map images")
    common(p_viz, "seed", "out", "checkpoint")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    rc = RunConfig(
        command=args.command,
        config_path=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        steps=getattr(args, "steps", None),
        out=getattr(args, "out", "out"),
        checkpoint=getattr(args, "checkpoint", None),
        image=getattr(args, "image", None),
        mask=getattr(args, "mask", None),
        sketch=getattr(args, "sketch", None),
        color=getattr(args, "color", None),
        scale=getattr(args, "scale", None),
    )
    handlers = {
        "train": cmd_train,
        "edit": cmd_edit,
        "gradcheck": cmd_gradcheck,
        "viz": cmd_viz,
    }
    try:
        return handlers[rc.command](rc)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
