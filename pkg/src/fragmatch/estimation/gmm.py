"""Moment objective under undominated strategies and stability.

Equality moments compare each child's match with the logit choice over her
reachable facilities and the outside option; inequality moments bound the
pairwise preference probabilities by the observed list orderings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import FlaggedValueWarning, InputError
from .data import EstimationDataset
from .likelihood import Theta

SD_FLOOR = 1e-8


@dataclass(frozen=True)
class UssMoments:
    """Per-child moment contributions; pair arrays are (n, F, F) over ordered pairs."""

    eq1: np.ndarray
    eq2: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pair_mask: np.ndarray


def _choice_probs(theta: Theta, data: EstimationDataset):
    if data.reachable is None or data.matched is None:
        raise InputError("the moment estimator needs matched facilities and reachable sets")
    reach = np.asarray(data.reachable, dtype=bool) & data.available
    U = np.asarray(theta.alpha, dtype=float)[None, :] - theta.beta * data.covariate
    c = np.maximum(np.where(reach, U, -np.inf).max(axis=1, initial=-np.inf), 0.0)
    E = np.where(reach, np.exp(np.where(reach, U, 0.0) - c[:, None]), 0.0)
    P = E / (np.exp(-c) + E.sum(axis=1))[:, None]
    return U, P


def _pair_probs(U: np.ndarray) -> np.ndarray:
    """p[i, a, b] = Pr(u_ia > u_ib) under independent Gumbel shocks."""
    diff = U[:, :, None] - U[:, None, :]
    return 0.5 * (1.0 + np.tanh(0.5 * diff))


def _ranked_above(data: EstimationDataset) -> np.ndarray:
    pos = data.position
    both = (pos[:, :, None] >= 0) & (pos[:, None, :] >= 0)
    return both & (pos[:, :, None] < pos[:, None, :])


def uss_moments(theta: Theta, data: EstimationDataset, pair_mask: np.ndarray | None = None) -> UssMoments:
    U, P = _choice_probs(theta, data)
    F = data.n_facilities
    hit = np.zeros((data.n, F))
    m = np.asarray(data.matched)
    rows = np.flatnonzero(m >= 0)
    hit[rows, m[rows]] = 1.0
    eq1 = hit - P
    eq2 = (data.covariate * eq1).sum(axis=1)
    p = _pair_probs(np.where(data.available, U, 0.0))
    above = _ranked_above(data).astype(float)
    mask = data.available[:, :, None] & data.available[:, None, :] & ~np.eye(F, dtype=bool)[None]
    if pair_mask is not None:
        mask &= np.asarray(pair_mask, dtype=bool)[None]
    lower = np.where(mask, p - above, 0.0)
    upper = np.where(mask, 1.0 - np.swapaxes(above, 1, 2) - p, 0.0)
    return UssMoments(eq1, eq2, lower, upper, mask)


def _standardize(M: np.ndarray):
    """Column means, floored sample standard deviations, and which were floored."""
    n = M.shape[0]
    mean = M.mean(axis=0)
    sd = M.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    floored = sd < SD_FLOOR
    return mean, np.where(floored, SD_FLOOR, sd), floored


def _coefficients(M: np.ndarray, negative_part: bool):
    """Objective value and d(objective)/d(M[i, j]) through the means and deviations."""
    n = M.shape[0]
    mean, sd, floored = _standardize(M)
    z = mean / sd
    if negative_part:
        z = np.minimum(z, 0.0)
    value = float((z**2).sum())
    # d z / d M_ij = (1/n - z (M_ij - mean_j) / ((n-1) sd_j)) / sd_j, sd term absent when floored
    spread = np.where(floored, 0.0, z / ((max(n - 1, 1)) * sd))
    C = (2 * z / sd) * (1.0 / n - spread * (M - mean))
    return value, C, floored & (np.abs(mean) > 0)


def gmm_objective_uss(
    theta: Theta, data: EstimationDataset, want_grad: bool = False, pair_mask: np.ndarray | None = None
):
    """Sum of squared standardized equality moments plus squared negative
    parts of standardized inequality moments over ordered facility pairs."""
    mom = uss_moments(theta, data, pair_mask)
    n, F = data.n, data.n_facilities
    v1, C1, f1 = _coefficients(mom.eq1, False)
    v2, C2, f2 = _coefficients(mom.eq2[:, None], False)
    vL, CL, fL = _coefficients(mom.lower.reshape(n, -1), True)
    vU, CU, fU = _coefficients(mom.upper.reshape(n, -1), True)
    if f1.any() or f2.any() or fL.any() or fU.any():
        warnings.warn("moment with zero sample deviation floored at 1e-8", FlaggedValueWarning, stacklevel=2)
    value = v1 + v2 + vL + vU
    if not want_grad:
        return value
    X = data.covariate
    U, P = _choice_probs(theta, data)
    # equality moments are -P (eq1) and -sum_s X_s P_s (eq2)
    Ceff = C1 + C2 * X
    CP = Ceff * P
    row = CP.sum(axis=1, keepdims=True)
    d_alpha = -(CP - P * row).sum(axis=0)
    xbar = (P * X).sum(axis=1, keepdims=True)
    d_beta = -(CP * (xbar - X)).sum()
    p = _pair_probs(np.where(data.available, U, 0.0))
    q = np.where(mom.pair_mask, p * (1.0 - p), 0.0)
    D = (CL.reshape(n, F, F) - CU.reshape(n, F, F)) * q
    d_alpha = d_alpha + D.sum(axis=(0, 2)) - D.sum(axis=(0, 1))
    d_beta += (D * (X[:, None, :] - X[:, :, None])).sum()
    return value, np.concatenate([[d_beta], d_alpha])


def subsample_pairs(n_facilities: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform random subset of ordered pairs, for very large facility sets."""
    keep = rng.random((n_facilities, n_facilities)) < fraction
    np.fill_diagonal(keep, False)
    return keep
