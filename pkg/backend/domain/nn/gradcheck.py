"""
Central finite-difference checking of analytic gradients (64-bit only).
"""
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from backend.domain.nn.layers import Layer

FD_STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, 1): relative for large gradients, absolute below unit scale."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / denom


def away_from_kinks(x: np.ndarray, margin: float = 1e-4) -> np.ndarray:
    """Push entries within `margin` of zero out to ±margin (PReLU is not differentiable at 0)."""
    x = np.array(x, dtype=np.float64, copy=True)
    close = np.abs(x) < margin
    x[close] = np.where(x[close] >= 0, margin, -margin)
    return x


def finite_diff_check(
    loss: Callable[[], float],
    analytic: Mapping[str, np.ndarray],
    arrays: Mapping[str, np.ndarray],
    step: float = FD_STEP,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Perturb every entry of each array in `arrays` in place by ±step, evaluate
    `loss()` and compare the central difference with `analytic[name]`.
    Returns the worst relative error. `max_entries` caps the number of checked
    entries per array (sampled with `rng`).
    """
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for name, arr in arrays.items():
        if arr.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 arrays, {name!r} is {arr.dtype}")
        grad = np.asarray(analytic[name], dtype=np.float64)
        flat = arr.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            plus = loss()
            flat[i] = original - step
            minus = loss()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            err = float(relative_error(grad.reshape(-1)[i], np.float64(numeric)))
            worst = max(worst, err)
    return worst


def check_layer(layer: Layer, x: np.ndarray, rng: Optional[np.random.Generator] = None) -> float:
    """
    Check input and parameter gradients of one layer under the projection loss
    sum(forward(x) * R) with a fixed random R.
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64, copy=True)
    out, cache = layer.forward_cached(x)
    projection = rng.standard_normal(out.shape)
    for p in layer.parameters().values():
        p.zero_grad()
    grad_x = layer.backward(projection, cache)

    analytic: Dict[str, np.ndarray] = {"input": grad_x}
    arrays: Dict[str, np.ndarray] = {"input": x}
    for name, p in layer.parameters().items():
        analytic[name] = p.grad.copy()
        arrays[name] = p.values

    def loss() -> float:
        return float(np.sum(layer.forward(x) * projection))

    return finite_diff_check(loss, analytic, arrays)
