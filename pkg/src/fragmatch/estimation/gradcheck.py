"""Analytic versus central-difference gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        g[k] = (f(xp) - f(xm)) / (2 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(1, |a|, |b|), coordinate-wise."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def gradient_check(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray, h: float = 1e-6
) -> float:
    """Largest coordinate-wise relative error between the analytic and numeric gradient.

    ``objective`` returns ``(value, gradient)``.
    """
    _, analytic = objective(np.asarray(x, dtype=float))
    numeric = numeric_gradient(lambda z: objective(z)[0], x, h)
    return float(relative_error(analytic, numeric).max())
