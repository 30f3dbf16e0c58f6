"""Optimizer, training loop, checkpointing, composition and feature viz."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ConvParams, Graph, Tensor, conv2d, frozen, graph_of
from .data import MaskSpec, extract_color_control, extract_sketch, generate_mask, generate_scene
from .losses import (
    FeatureExtractor,
    LossReport,
    LossWeights,
    adversarial_loss,
    perceptual_loss,
    pixel_loss,
    style_loss,
    total_loss,
    tv_loss,
    weighted_total,
)
from .network import (
    BackboneConfig,
    EditInput,
    build_discriminator,
    build_generator,
    discriminate,
    generator_forward,
)
from .structure import SGBState

CHECKPOINT_MAGIC = b"DFLC"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "step,re,prec,style,adv,tv,total"


class CheckpointError(RuntimeError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the last good state."""

    def __init__(self, message, checkpoint, metrics):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.metrics = metrics


# ---------------------------------------------------------------------------
# Adam


class Adam:
    """Adam with bias correction; beta1=0.5 suits the adversarial phase."""

    def __init__(self, graph: Graph, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.graph = graph
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(p.data) for name, p in graph}
        self.v = {name: np.zeros_like(p.data) for name, p in graph}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> bool:
        """Apply one update; a non-finite gradient rejects the whole step."""
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                return False
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.graph:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state(self, prefix: str, tensors: dict[str, np.ndarray], t: int):
        self.t = t
        for name in self.m:
            self.m[name] = tensors[f"{prefix}.m.{name}"].copy()
            self.v[name] = tensors[f"{prefix}.v.{name}"].copy()


# ---------------------------------------------------------------------------
# checkpoint serialization


@dataclass
class Checkpoint:
    version: int
    meta: dict
    tensors: dict[str, np.ndarray]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta_blob = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode()
    names = sorted(ckpt.tensors)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", ckpt.version))
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode()
            arr = np.ascontiguousarray(ckpt.tensors[name], dtype=np.float64)
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint: {what} missing at byte {pos}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path!r} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version} unsupported; this build reads "
            f"version {CHECKPOINT_VERSION}"
        )
    (meta_len,) = struct.unpack("<I", take(4, "meta length"))
    try:
        meta = json.loads(take(meta_len, "meta").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint metadata") from exc
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode()
        (ndim,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = take(8 * n_items, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last record")
    return Checkpoint(version=version, meta=meta, tensors=tensors)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSettings:
    config: BackboneConfig = field(default_factory=BackboneConfig)
    steps: int = 100
    seed: int = 1
    data_seed: int | None = None
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    dataset_size: int = 16
    n_shapes: int = 3
    mask_strokes: int | None = None
    mask_width: tuple[int, int] | None = None
    mask_walk: int | None = None

    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def mask_params(self) -> tuple[int, tuple[int, int], int]:
        """Stroke count / width / walk length, scaled to the image size unless set."""
        size = self.config.image_size
        strokes = self.mask_strokes if self.mask_strokes is not None else max(1, size // 16)
        width = self.mask_width if self.mask_width is not None else (3, max(5, size // 8))
        walk = self.mask_walk if self.mask_walk is not None else max(12, size * size // 30 // strokes)
        return strokes, width, walk


def _derived_seeds(seed: int) -> tuple[int, int, int, int]:
    s = np.random.SeedSequence(seed).generate_state(4)
    return tuple(int(x) for x in s)


class TrainState:
    """Everything the loop mutates: parameters, optimizers, step counter."""

    def __init__(self, settings: TrainSettings):
        self.settings = settings
        gen_seed, dg_seed, dl_seed, fx_seed = _derived_seeds(settings.seed)
        self.gen = build_generator(settings.config, gen_seed)
        self.disc_g = build_discriminator(settings.config.base_channels, dg_seed)
        self.disc_l = build_discriminator(settings.config.base_channels, dl_seed)
        self.fx = FeatureExtractor.build(fx_seed)
        self.g_graph = graph_of({"gen": self.gen})
        self.d_graph = graph_of({"disc_g": self.disc_g, "disc_l": self.disc_l})
        self.adam_g = Adam(self.g_graph, settings.lr, settings.beta1, settings.beta2, settings.adam_eps)
        self.adam_d = Adam(self.d_graph, settings.lr, settings.beta1, settings.beta2, settings.adam_eps)
        self.step = 0

    def snapshot(self) -> Checkpoint:
        s = self.settings
        meta = {
            "config": {
                "levels": s.config.levels,
                "base_channels": s.config.base_channels,
                "image_size": s.config.image_size,
            },
            "train": {
                "seed": s.seed,
                "data_seed": s.data_seed,
                "lr": s.lr,
                "beta1": s.beta1,
                "beta2": s.beta2,
                "adam_eps": s.adam_eps,
                "dataset_size": s.dataset_size,
                "n_shapes": s.n_shapes,
                "mask_strokes": s.mask_params()[0],
                "mask_width": list(s.mask_params()[1]),
                "mask_walk": s.mask_params()[2],
            },
            "weights": {
                "re": s.weights.re,
                "prec": s.weights.prec,
                "style": s.weights.style,
                "tv": s.weights.tv,
                "adv": s.weights.adv,
            },
            "step": self.step,
            "adam_t": {"g": self.adam_g.t, "d": self.adam_d.t},
        }
        tensors = {}
        for name, p in self.g_graph:
            tensors[name] = p.data.copy()
        for name, p in self.d_graph:
            tensors[name] = p.data.copy()
        for k, v in self.adam_g.state_tensors("opt_g").items():
            tensors[k] = v.copy()
        for k, v in self.adam_d.state_tensors("opt_d").items():
            tensors[k] = v.copy()
        return Checkpoint(CHECKPOINT_VERSION, meta, tensors)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TrainState":
        state = cls(settings_from_meta(ckpt.meta))
        state.step = int(ckpt.meta["step"])
        for name, p in list(state.g_graph) + list(state.d_graph):
            arr = ckpt.tensors[name]
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"tensor {name} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr.copy()
        state.adam_g.load_state("opt_g", ckpt.tensors, int(ckpt.meta["adam_t"]["g"]))
        state.adam_d.load_state("opt_d", ckpt.tensors, int(ckpt.meta["adam_t"]["d"]))
        return state


def settings_from_meta(meta: dict) -> TrainSettings:
    cfg = meta["config"]
    tr = meta["train"]
    w = meta["weights"]
    return TrainSettings(
        config=BackboneConfig(cfg["levels"], cfg["base_channels"], cfg["image_size"]),
        seed=tr["seed"],
        data_seed=tr["data_seed"],
        lr=tr["lr"],
        beta1=tr["beta1"],
        beta2=tr["beta2"],
        adam_eps=tr["adam_eps"],
        weights=LossWeights(w["re"], w["prec"], w["style"], w["tv"], w["adv"]),
        dataset_size=tr["dataset_size"],
        n_shapes=tr["n_shapes"],
        mask_strokes=tr["mask_strokes"],
        mask_width=tuple(tr["mask_width"]),
        mask_walk=tr["mask_walk"],
    )


def make_sample(settings: TrainSettings, index: int):
    """Deterministic scene + controls for one dataset slot."""
    size = settings.config.image_size
    base = int(
        np.random.SeedSequence([settings.effective_data_seed(), index]).generate_state(1)[0]
    )
    scene = generate_scene(size, settings.n_shapes, base)
    strokes, width, walk = settings.mask_params()
    mask = generate_mask(MaskSpec(strokes, width, walk, base + 1), size)
    sketch = extract_sketch(scene.image)
    color = extract_color_control(scene.image, mask, sketch)
    inp = EditInput.create(
        scene.image, mask[None], (sketch * mask)[None], color, seed=base
    )
    return scene, inp


def train(settings: TrainSettings, resume: Checkpoint | None = None):
    """Alternate critic and generator updates; returns (Checkpoint, reports).

    Raises DivergenceError, retaining the last finite state, if any loss or
    gradient stops being finite.
    """
    state = TrainState.from_checkpoint(resume) if resume else TrainState(settings)
    if resume is not None:
        state.settings = replace(settings, steps=settings.steps)
    cfg = settings.config
    weights = settings.weights
    adv_on = weights.adv > 0
    metrics: list[tuple[int, LossReport]] = []
    last_good = state.snapshot()
    zero = Tensor(np.zeros(1))
    while state.step < settings.steps:
        step = state.step
        scene, inp = make_sample(settings, step % settings.dataset_size)
        i_gt = Tensor(scene.image[None])
        mask_t = inp.mask

        if adv_on:
            with frozen(state.g_graph):
                fake = generator_forward(inp, state.gen, cfg)
            pairs = []
            for which, disc in (("global", state.disc_g), ("local", state.disc_l)):
                r = discriminate(i_gt, mask_t, which, disc)
                f = discriminate(fake, mask_t, which, disc)
                pairs.append(adversarial_loss(r, f, "discriminator"))
            from .autodiff import add, scale

            d_loss = scale(add(pairs[0], pairs[1]), 0.5)
            state.d_graph.zero_grad()
            d_grads = state.d_graph.backward(d_loss)
            if not state.adam_d.step(d_grads):
                raise DivergenceError(
                    f"non-finite critic gradient at step {step}", last_good, metrics
                )

        i_out = generator_forward(inp, state.gen, cfg)
        re = pixel_loss(i_out, i_gt)
        prec = perceptual_loss(i_out, i_gt, state.fx)
        sty = style_loss(i_out, i_gt, state.fx)
        tv = tv_loss(i_out, mask_t)
        if adv_on:
            with frozen(state.d_graph):
                terms = []
                for which, disc in (("global", state.disc_g), ("local", state.disc_l)):
                    r = discriminate(i_gt, mask_t, which, disc)
                    f = discriminate(i_out, mask_t, which, disc)
                    terms.append(adversarial_loss(r, f, "generator"))
            from .autodiff import add, scale

            adv_t = scale(add(terms[0], terms[1]), 0.5)
        else:
            adv_t = zero
        total_t = weighted_total(re, prec, sty, tv, adv_t, weights)
        report = total_loss(re, prec, sty, tv, adv_t, weights)
        if not math.isfinite(report.total):
            raise DivergenceError(
                f"non-finite loss at step {step}", last_good, metrics
            )
        state.g_graph.zero_grad()
        g_grads = state.g_graph.backward(total_t)
        if not state.adam_g.step(g_grads):
            raise DivergenceError(
                f"non-finite generator gradient at step {step}", last_good, metrics
            )
        metrics.append((step, report))
        state.step += 1
        last_good = state.snapshot()
    return last_good, metrics


def metrics_csv(metrics) -> str:
    lines = [METRICS_HEADER]
    for step, r in metrics:
        vals = ",".join(f"{v:.17g}" for v in (r.re, r.prec, r.style, r.adv, r.tv, r.total))
        lines.append(f"{step},{vals}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# composition and visualization


def compose(i_in, i_out, mask) -> np.ndarray:
    """Paste generated hole content over the known input: M*out + (1-M)*in."""

    def arr(x):
        return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)

    a, b, m = arr(i_in), arr(i_out), arr(mask)
    if a.shape[-2:] != b.shape[-2:] or a.shape[-2:] != m.shape[-2:]:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, mask {m.shape}")
    return m * b + (1.0 - m) * a


def _area_downsample(arr: np.ndarray, th: int, tw: int) -> np.ndarray:
    c, h, w = arr.shape
    fh, fw = h // th, w // tw
    return arr.reshape(c, th, fh, tw, fw).mean(axis=(2, 4))


def fit_linear_map(
    features: np.ndarray,
    target: np.ndarray,
    seed: int = 0,
    steps: int = 2000,
    lr0: float = 0.05,
    decay: float = 0.993,
):
    """Learn a 1x1 conv from a feature map to a target by L1 descent.

    features is [C,h,w], target [K,h,w]; returns (ConvParams, final L1).
    """
    from .autodiff import absval, conv_init, mean_all, sub as t_sub

    c = features.shape[0]
    k = target.shape[0]
    rng = np.random.default_rng(seed)
    params = conv_init(rng, c, k, 1)
    g = Graph({"w": params.w, "b": params.b})
    opt = Adam(g, lr=lr0, beta1=0.9, beta2=0.999)
    feat_t = Tensor(features[None])
    tgt_t = Tensor(target[None])
    loss_val = math.inf
    for _ in range(steps):
        pred = conv2d(feat_t, params.w, params.b, 1, 0)
        loss = mean_all(absval(t_sub(pred, tgt_t)))
        loss_val = loss.item()
        g.zero_grad()
        opt.step(g.backward(loss))
        opt.lr *= decay
    pred = conv2d(feat_t, params.w, params.b, 1, 0)
    return params, mean_all(absval(t_sub(pred, tgt_t))).item()


def visualize_features(
    state: SGBState,
    image_target: np.ndarray,
    sketch_target: np.ndarray,
    seed: int = 0,
    fit_steps: int = 300,
):
    """Map each round's fused feature to a color image and each sketch feature
    to a grayscale image through learned 1x1 convolutions.

    Returns (color_maps, gray_maps): per-round [3,h,w] / [1,h,w] arrays.
    """
    h, w = state.fused[0].shape[2:]
    img_t = _area_downsample(np.asarray(image_target, dtype=np.float64), h, w)
    sk = np.asarray(sketch_target, dtype=np.float64)
    if sk.ndim == 2:
        sk = sk[None]
    sk_t = _area_downsample(sk, h, w)
    color_maps, gray_maps = [], []
    n = len(state.fused) - 1
    for i in range(1, n + 1):
        feat = state.fused[i].data[0]
        params, _ = fit_linear_map(feat, img_t, seed=seed + i, steps=fit_steps)
        out = conv2d(Tensor(feat[None]), params.w, params.b, 1, 0).data[0]
        color_maps.append(np.clip(out, 0.0, 1.0))
        # round i's fusion consumed sketch feature i-1; show that one beside it
        sfeat = state.sketch_feats[i - 1].data[0]
        sparams, _ = fit_linear_map(sfeat, sk_t, seed=seed + 100 + i, steps=fit_steps)
        sout = conv2d(Tensor(sfeat[None]), sparams.w, sparams.b, 1, 0).data[0]
        gray_maps.append(np.clip(sout, 0.0, 1.0))
    return color_maps, gray_maps
