"""Central finite-difference checks for the hand-written gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .nn import Parameterized, get_flat, set_flat


def numeric_gradient(loss: Callable[[], float], model: Parameterized, coords, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss()`` wrt the flattened parameter coordinates ``coords``."""
    base = get_flat(model)
    out = np.empty(len(coords))
    try:
        for k, c in enumerate(coords):
            x = base.copy()
            x[c] += h
            set_flat(model, x)
            plus = loss()
            x[c] -= 2 * h
            set_flat(model, x)
            minus = loss()
            out[k] = (plus - minus) / (2 * h)
    finally:
        set_flat(model, base)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_gradient(loss_and_grad: Callable[[], tuple[float, np.ndarray]], model: Parameterized,
                   n_coords: int = 20, rng: np.random.Generator | None = None, h: float = 1e-5):
    """Compare the analytic flat gradient with central differences on random coordinates.

    Returns ``(max relative error, coords)``.
    """
    rng = rng or np.random.default_rng(0)
    _, grad = loss_and_grad()
    size = grad.size
    coords = rng.choice(size, size=min(n_coords, size), replace=False)
    numeric = numeric_gradient(lambda: loss_and_grad()[0], model, coords, h)
    err = relative_error(grad[coords], numeric)
    return float(err.max()), coords
