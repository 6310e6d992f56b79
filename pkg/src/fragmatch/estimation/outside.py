"""Calibrating the mean utility of the outside option from simulated lists.

Each simulated child contributes the probability that a Gumbel-shocked
outside option falls between her K_i-th and (K_i + ell)-th best options.
"""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ..behavior import OptimismParams, sample_gamma, sample_gumbel
from ..errors import FlaggedValueWarning


@dataclass(frozen=True)
class OutsideOptionEstimate:
    alpha_bar: float
    loglik: float
    divergent: bool = False
    n_obs: int = 0


def outside_option_intervals(
    sorted_utilities: Sequence[np.ndarray], lengths: Sequence[int], ell: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """(upper, lower) bounds: the K_i-th and (K_i + ell)-th best utilities.

    Utilities are sorted descending per child. An empty list has no upper
    bound; a choice set shorter than K_i + ell has no lower bound.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    upper = np.empty(len(lengths))
    lower = np.empty(len(lengths))
    for k, (u, K) in enumerate(zip(sorted_utilities, lengths)):
        u = np.asarray(u, dtype=float)
        upper[k] = u[K - 1] if K >= 1 else np.inf
        lower[k] = u[K + ell - 1] if K + ell <= len(u) else -np.inf
    return upper, lower


def interval_loglik(a: float, upper: np.ndarray, lower: np.ndarray) -> float:
    """Sum of log Pr(lower - a <= eps <= upper - a) for standard Gumbel eps."""
    A = np.exp(a - upper)
    B = np.exp(a - lower)
    with np.errstate(over="ignore", invalid="ignore"):
        gap = np.where(np.isinf(B), np.inf, B - A)
        terms = -A + np.log(-np.expm1(-gap))
    return float(terms.sum())


def interval_score(a: float, upper: np.ndarray, lower: np.ndarray) -> float:
    A = np.exp(a - upper)
    B = np.exp(a - lower)
    with np.errstate(over="ignore", invalid="ignore"):
        gap = np.where(np.isinf(B), np.inf, B - A)
        tail = np.where(np.isinf(gap), 0.0, np.where(gap > 1e-12, gap / np.expm1(gap), 1.0))
    return float((tail - A).sum())


def fit_interval_mle(upper: np.ndarray, lower: np.ndarray) -> OutsideOptionEstimate:
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    informative = ~(np.isposinf(upper) & np.isneginf(lower))
    upper, lower = upper[informative], lower[informative]
    n = len(upper)
    if n == 0 or np.isneginf(lower).all() or np.isposinf(upper).all():
        warnings.warn("outside-option likelihood is unbounded; estimate diverges", FlaggedValueWarning, stacklevel=2)
        direction = np.inf if n and np.isposinf(upper).all() else -np.inf
        return OutsideOptionEstimate(direction, np.nan, divergent=True, n_obs=n)
    finite = np.concatenate([upper[np.isfinite(upper)], lower[np.isfinite(lower)]])
    center = float(np.median(finite))
    step = max(1.0, float(finite.std()))
    lo, hi = center - step, center + step
    for _ in range(200):
        if interval_score(lo, upper, lower) > 0:
            break
        lo -= step
        step *= 2
    for _ in range(200):
        if interval_score(hi, upper, lower) < 0:
            break
        hi += step
        step *= 2
    a = brentq(interval_score, lo, hi, args=(upper, lower), xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
    return OutsideOptionEstimate(float(a), interval_loglik(a, upper, lower), n_obs=n)


def estimate_outside_option(
    sim_utilities: Sequence[np.ndarray], lengths: Sequence[int], ell: int = 5
) -> OutsideOptionEstimate:
    """MLE of the outside option's mean utility, pooled over runs and children."""
    upper, lower = outside_option_intervals(sim_utilities, lengths, ell)
    return fit_interval_mle(upper, lower)


def simulated_intervals(
    mean_utility: np.ndarray,
    available: np.ndarray,
    lengths: np.ndarray,
    rng: np.random.Generator,
    runs: int,
    ell: int = 5,
    *,
    cutoffs: np.ndarray | None = None,
    scores: np.ndarray | None = None,
    psi: OptimismParams | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Interval bounds pooled over ``runs`` shock draws.

    With ``psi`` the choice set is restricted as under optimistic lists:
    a school counts only if its cutoff minus a Gamma optimism draw is at
    most the child's score.
    """
    V = np.asarray(mean_utility, dtype=float)
    n, m = V.shape
    K = np.asarray(lengths, dtype=np.int64)
    rows = np.arange(n)
    uppers, lowers = [], []
    for _ in range(runs):
        mask = np.asarray(available, dtype=bool)
        if psi is not None:
            nu = sample_gamma(psi, rng, n)
            cut = np.broadcast_to(np.asarray(cutoffs, dtype=float), (n, m))
            mask = mask & (cut - nu[:, None] <= np.asarray(scores, dtype=float)[:, None])
        U = np.where(mask, V + sample_gumbel(rng, (n, m)), -np.inf)
        S = -np.sort(-U, axis=1)
        size = mask.sum(axis=1)
        uppers.append(np.where(K >= 1, S[rows, np.clip(K - 1, 0, m - 1)], np.inf))
        lo = K + ell - 1
        lowers.append(np.where(lo < size, S[rows, np.clip(lo, 0, m - 1)], -np.inf))
    return np.concatenate(uppers), np.concatenate(lowers)


def shift_qualities(alpha: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Re-express facility qualities relative to an outside option of mean zero."""
    return np.asarray(alpha, dtype=float) - alpha_bar
