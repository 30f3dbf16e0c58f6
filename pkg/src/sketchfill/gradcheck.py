"""Central finite-difference verification of recorded gradients."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, backprop


def grad_check(closure, params, step: float = 1e-5, max_coords: int = 64, seed: int = 0) -> float:
    """Compare analytic gradients of closure(params) against central differences.

    closure must be deterministic and return a scalar Tensor. At most
    max_coords coordinates per tensor are sampled (seeded). Returns the worst
    |analytic - numeric| / max(1, |analytic|, |numeric|); non-finite closure
    values report as inf.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    out = closure(params)
    base = out.item()
    if not math.isfinite(base):
        return math.inf
    backprop(out)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            h = step * (1.0 + abs(orig))
            flat[i] = orig + h
            f_plus = closure(params).item()
            flat[i] = orig - h
            f_minus = closure(params).item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                return math.inf
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(ana_flat[i] - numeric) / max(1.0, abs(ana_flat[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst
