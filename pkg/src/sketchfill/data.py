"""Synthetic training data: flat-colored scenes with exact contour maps,
free-form stroke masks, and the sketch/color control extractors."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

HOLE_FRACTION_BOUNDS = (0.05, 0.50)
SKETCH_THRESHOLD = 0.2
MAX_MASK_ATTEMPTS = 16
STROKE_MAX_LEN = 5

# separating region luminances keeps every contour above the sketch threshold
_LUMINANCE_RANGE = (0.06, 0.94)
_COLOR_JITTER = 0.02


class MaskGenerationError(RuntimeError):
    """Hole-fraction bounds could not be met within the attempt budget."""


@dataclass
class SyntheticScene:
    image: np.ndarray  # [3, H, W] in [0,1]
    true_edges: np.ndarray  # [H, W] binary contour map
    region_colors: np.ndarray  # [n_regions, 3], row 0 is the background


@dataclass
class MaskSpec:
    strokes: int = 3
    width_range: tuple[int, int] = (3, 7)
    walk_length: int = 40
    seed: int = 0


def generate_scene(size: int, n_shapes: int, seed: int) -> SyntheticScene:
    """Flat-colored ellipses and convex polygons on a plain background."""
    if size < 1 or size & (size - 1):
        raise ValueError(f"size must be a power of two, got {size}")
    if n_shapes < 1:
        raise ValueError(f"n_shapes must be >= 1, got {n_shapes}")
    rng = np.random.default_rng([seed, size, n_shapes])

    lo, hi = _LUMINANCE_RANGE
    lums = np.linspace(lo, hi, n_shapes + 1)
    rng.shuffle(lums)
    colors = np.empty((n_shapes + 1, 3))
    for i, lum in enumerate(lums):
        jitter = rng.uniform(-_COLOR_JITTER, _COLOR_JITTER, 3)
        colors[i] = np.clip(lum + jitter - jitter.mean(), 0.0, 1.0)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    region = np.zeros((size, size), dtype=np.int64)
    for s in range(1, n_shapes + 1):
        cy, cx = rng.uniform(0.3 * size, 0.7 * size, 2)
        if rng.random() < 0.5:
            ay, ax = rng.uniform(0.10 * size, 0.24 * size, 2)
            theta = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = dy * np.cos(theta) + dx * np.sin(theta)
            v = -dy * np.sin(theta) + dx * np.cos(theta)
            inside = (u / ay) ** 2 + (v / ax) ** 2 <= 1.0
        else:
            k = rng.integers(3, 7)
            radius = rng.uniform(0.12 * size, 0.24 * size)
            phase = rng.uniform(0, 2 * np.pi)
            angles = phase + np.arange(k) * 2 * np.pi / k
            vy, vx = cy + radius * np.sin(angles), cx + radius * np.cos(angles)
            inside = np.ones((size, size), dtype=bool)
            for i in range(k):
                j = (i + 1) % k
                ey, ex = vy[j] - vy[i], vx[j] - vx[i]
                cross = ey * (xx - vx[i]) - ex * (yy - vy[i])
                inside &= cross <= 0
        region[inside] = s

    edges = np.zeros((size, size), dtype=bool)
    edges[:-1, :] |= region[:-1, :] != region[1:, :]
    edges[1:, :] |= region[1:, :] != region[:-1, :]
    edges[:, :-1] |= region[:, :-1] != region[:, 1:]
    edges[:, 1:] |= region[:, 1:] != region[:, :-1]

    image = colors[region].transpose(2, 0, 1)
    return SyntheticScene(
        image=np.ascontiguousarray(image),
        true_edges=edges.astype(np.float64),
        region_colors=colors,
    )


def generate_mask(spec: MaskSpec, size: int) -> np.ndarray:
    """Union of dilated random-walk strokes with hole fraction in [5%, 50%].

    Retries with fresh sub-seeds up to 16 times before giving up.
    """
    w_lo, w_hi = spec.width_range
    if spec.strokes < 1 or w_lo < 1 or w_hi < w_lo or spec.walk_length < 1:
        raise ValueError(f"invalid mask spec {spec}")
    lo, hi = HOLE_FRACTION_BOUNDS
    for attempt in range(MAX_MASK_ATTEMPTS):
        rng = np.random.default_rng([spec.seed, attempt, size])
        mask = np.zeros((size, size), dtype=np.float64)
        for _ in range(spec.strokes):
            width = int(rng.integers(w_lo, w_hi + 1))
            r = (width - 1) // 2
            dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
            disk = dy * dy + dx * dx <= max(r * r, 0.25)
            y, x = rng.integers(0, size, 2)
            for _ in range(spec.walk_length):
                y0, y1 = max(y - r, 0), min(y + r + 1, size)
                x0, x1 = max(x - r, 0), min(x + r + 1, size)
                sub = disk[y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)]
                mask[y0:y1, x0:x1][sub] = 1.0
                step = rng.integers(-1, 2, 2)
                y = int(np.clip(y + step[0], 0, size - 1))
                x = int(np.clip(x + step[1], 0, size - 1))
        frac = mask.mean()
        if lo <= frac <= hi:
            return mask
    raise MaskGenerationError(
        f"hole fraction outside [{lo}, {hi}] after {MAX_MASK_ATTEMPTS} attempts"
    )


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0
_SOBEL_Y = _SOBEL_X.T


def _correlate3(plane: np.ndarray, k: np.ndarray) -> np.ndarray:
    padded = np.pad(plane, 1, mode="edge")
    out = np.zeros_like(plane)
    for u in range(3):
        for v in range(3):
            if k[u, v] != 0.0:
                out += k[u, v] * padded[u : u + plane.shape[0], v : v + plane.shape[1]]
    return out


def extract_sketch(image: np.ndarray) -> np.ndarray:
    """Binary line map: thresholded luminance gradient magnitude, thinned by
    non-maximum suppression along the gradient direction (width <= 2)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a [3,H,W] image, got {img.shape}")
    lum = img.mean(axis=0)
    gx = _correlate3(lum, _SOBEL_X)
    gy = _correlate3(lum, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    strong = mag >= SKETCH_THRESHOLD
    if not strong.any():
        return np.zeros_like(lum)

    # quantize gradient direction to 4 bins and compare along it
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.floor((angle + np.pi / 8) / (np.pi / 4)).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros_like(strong)
    for b, (dy, dx) in offsets.items():
        sel = strong & (bins == b)
        fwd = padded[1 + dy : 1 + dy + mag.shape[0], 1 + dx : 1 + dx + mag.shape[1]]
        bwd = padded[1 - dy : 1 - dy + mag.shape[0], 1 - dx : 1 - dx + mag.shape[1]]
        keep |= sel & (mag >= fwd) & (mag >= bwd)
    return keep.astype(np.float64)


def _label_components(free: np.ndarray) -> tuple[np.ndarray, int]:
    labels = np.zeros(free.shape, dtype=np.int64)
    current = 0
    h, w = free.shape
    for sy, sx in zip(*np.nonzero(free)):
        if labels[sy, sx]:
            continue
        current += 1
        queue = deque([(sy, sx)])
        labels[sy, sx] = current
        while queue:
            y, x = queue.popleft()
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and free[ny, nx] and not labels[ny, nx]:
                    labels[ny, nx] = current
                    queue.append((ny, nx))
    return labels, current


def extract_color_control(
    image: np.ndarray, mask: np.ndarray, sketch: np.ndarray
) -> np.ndarray:
    """Short strokes of per-region median color inside the hole.

    Regions are 4-connected components of hole-minus-sketch pixels; stroke
    budget is capped at 10% of the hole so the control stays sparse.
    """
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m[0]
    sk = np.asarray(sketch, dtype=np.float64)
    if sk.ndim == 3:
        sk = sk[0]
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be binary")
    out = np.zeros_like(img)
    hole = m.astype(bool)
    hole_px = int(hole.sum())
    if hole_px == 0:
        return out
    budget = hole_px // 10
    if budget == 0:
        return out
    free = hole & ~sk.astype(bool)
    labels, count = _label_components(free)
    for comp in range(1, count + 1):
        if budget <= 0:
            break
        ys, xs = np.nonzero(labels == comp)
        if ys.size < 4:
            continue
        median = np.median(img[:, ys, xs], axis=1)
        cy, cx = ys.mean(), xs.mean()
        anchor = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
        ay, ax = int(ys[anchor]), int(xs[anchor])
        length = min(STROKE_MAX_LEN, budget)
        placed = 0
        x = ax
        while placed < length and x < img.shape[2] and labels[ay, x] == comp:
            out[:, ay, x] = median
            placed += 1
            x += 1
        x = ax - 1
        while placed < length and x >= 0 and labels[ay, x] == comp:
            out[:, ay, x] = median
            placed += 1
            x -= 1
        budget -= placed
    return out
