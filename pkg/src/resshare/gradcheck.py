"""Central finite-difference verification of analytic gradients.

The loss callable must be deterministic (dropout off) and re-read the
parameter buffers on every call, because the checker perturbs them in place.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, zero_grads


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Per coordinate: |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    `max_coords` caps the number of coordinates probed per parameter
    (random subset, seeded); None probes every coordinate.
    """
    return max(finite_diff_report(f, params, h, max_coords, seed).values())


def finite_diff_report(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Per-parameter max relative error, keyed by parameter name."""
    if h <= 0:
        raise ValueError(f"finite_diff_check: h must be positive, got {h}")
    zero_grads(params.values())
    loss = f()
    backward(loss)
    analytic = {name: np.array(p.grad, dtype=np.float64) for name, p in params.items()}

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        ana = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = ana[i]
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
        report[name] = worst
    return report
