"""Exploded-logit log-likelihoods for strict, weak and optimistic truth-telling.

Each function returns the log-likelihood and, on request, its gradient in
the order ``[beta, alpha_0, ..., alpha_{F-1}]`` followed by ``[kappa, lam]``
for the optimistic model. Utility is ``alpha_f - beta * x_if`` with ``x``
the dataset's covariate; the outside option has utility 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammainc, gammaincc, gammaln, logsumexp

from ..behavior import OptimismParams
from ..errors import DataInconsistencyWarning, InputError
from .data import EstimationDataset


@dataclass(frozen=True, eq=False)
class Theta:
    beta: float
    alpha: np.ndarray
    psi: OptimismParams | None = None

    def vector(self) -> np.ndarray:
        tail = [] if self.psi is None else [self.psi.kappa, self.psi.lam]
        return np.concatenate([[self.beta], np.asarray(self.alpha, dtype=float), tail])

    @classmethod
    def from_vector(cls, v: np.ndarray, n_facilities: int, with_psi: bool = False) -> Theta:
        v = np.asarray(v, dtype=float)
        psi = OptimismParams(float(v[1 + n_facilities]), float(v[2 + n_facilities])) if with_psi else None
        return cls(float(v[0]), v[1 : 1 + n_facilities].copy(), psi)

    @classmethod
    def zeros(cls, n_facilities: int, psi: OptimismParams | None = None) -> Theta:
        return cls(0.0, np.zeros(n_facilities), psi)


def _scaled_utilities(theta: Theta, data: EstimationDataset):
    """exp(U - c) per child and facility (0 where unavailable), and the shift c >= 0."""
    alpha = np.asarray(theta.alpha, dtype=float)
    if alpha.shape != (data.n_facilities,):
        raise InputError(f"theta has {alpha.size} qualities for {data.n_facilities} facilities")
    U = alpha[None, :] - theta.beta * data.covariate
    U = np.where(data.available, U, -np.inf)
    c = np.maximum(U.max(axis=1, initial=-np.inf), 0.0)
    E = np.exp(U - c[:, None])
    return U, E, c


def _listed(E: np.ndarray, data: EstimationDataset):
    R = data.rol_matrix
    valid = R >= 0
    EL = np.where(valid, np.take_along_axis(E, np.maximum(R, 0), axis=1), 0.0)
    # tail[:, r] = sum of exp-utilities listed at rank r or below
    tail = np.cumsum(EL[:, ::-1], axis=1)[:, ::-1]
    return R, valid, EL, tail


def _theta_grad(G: np.ndarray, data: EstimationDataset) -> np.ndarray:
    """Chain rule from per-(child, facility) utility derivatives to (beta, alpha)."""
    return np.concatenate([[-(G * data.covariate).sum()], G.sum(axis=0)])


def _truth_telling(theta: Theta, data: EstimationDataset, with_outside: bool, want_grad: bool):
    U, E, c = _scaled_utilities(theta, data)
    R, valid, EL, tail = _listed(E, data)
    e0 = np.exp(-c) if with_outside else np.zeros(data.n)
    rest = E.sum(axis=1) - EL.sum(axis=1)
    den = np.where(valid, tail + rest[:, None] + e0[:, None], 1.0)
    logEL = np.where(valid, np.log(np.where(valid, EL, 1.0)), 0.0)
    ll = logEL.sum(axis=1) - np.log(den).sum(axis=1)
    close = np.zeros(data.n, dtype=bool)
    if with_outside:
        close = data.lengths < data.k_max
        ll = ll + np.where(close, -c - np.log(e0 + rest), 0.0)
    value = float(ll.sum())
    if not want_grad:
        return value
    inv = np.where(valid, 1.0 / den, 0.0)
    cuminv = np.cumsum(inv, axis=1)
    pos = data.position
    listed = pos >= 0
    at_pos = np.take_along_axis(cuminv, np.maximum(pos, 0), axis=1)
    last = np.where(data.lengths > 0, cuminv[np.arange(data.n), np.maximum(data.lengths - 1, 0)], 0.0)
    if with_outside:
        last = last + np.where(close, 1.0 / (e0 + rest), 0.0)
    G = np.where(listed, 1.0 - E * at_pos, -E * last[:, None])
    return value, _theta_grad(G, data)


def loglik_stt(theta: Theta, data: EstimationDataset, want_grad: bool = False):
    """Lists rank every school above the outside option, cut at ``data.k_max``."""
    return _truth_telling(theta, data, True, want_grad)


def loglik_wtt(theta: Theta, data: EstimationDataset, want_grad: bool = False):
    """Lists rank the top ``K_i`` schools; the outside option plays no role."""
    return _truth_telling(theta, data, False, want_grad)


# ---------------------------------------------------------------------------
# Optimism


def gamma_cdf(x: np.ndarray, kappa: float, lam: float) -> np.ndarray:
    return gammainc(kappa, lam * np.asarray(x, dtype=float))


def _gamma_sf(x: np.ndarray, kappa: float, lam: float) -> np.ndarray:
    return gammaincc(kappa, lam * np.asarray(x, dtype=float))


def _dP_da(a: float, y: np.ndarray) -> np.ndarray:
    """Derivative of the regularized lower incomplete gamma P(a, y) in ``a``.

    Uses P(a, y) = y^a e^-y sum_n y^n / Gamma(a+n+1) differentiated term by
    term; points where the upper tail is below 1e-17 are returned as 0.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    live = (y > 0) & np.isfinite(y)
    live &= gammaincc(a, np.where(live, y, 1.0)) > 1e-17
    if not live.any():
        return out
    yl = y[live]
    n_terms = int(yl.max() + 12 * np.sqrt(yl.max()) + 40)
    n = np.arange(n_terms, dtype=float)[:, None]
    logy = np.log(yl)[None, :]
    log_t = (a + n) * logy - yl[None, :] - gammaln(a + n + 1)
    t = np.exp(log_t)
    out[live] = np.log(yl) * t.sum(axis=0) - (t * digamma(a + n + 1)).sum(axis=0)
    return out


def _dP_dlam(kappa: float, lam: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    live = (x > 0) & np.isfinite(x)
    y = lam * x[live]
    out[live] = x[live] * np.exp((kappa - 1) * np.log(y) - y - gammaln(kappa))
    return out


def _interval_mass(lo: np.ndarray, hi: np.ndarray, kappa: float, lam: float) -> np.ndarray:
    """F(hi) - F(lo), taken from whichever tail keeps precision."""
    p_lo, p_hi = gamma_cdf(lo, kappa, lam), gamma_cdf(hi, kappa, lam)
    q_lo, q_hi = _gamma_sf(lo, kappa, lam), _gamma_sf(hi, kappa, lam)
    return np.where(p_hi < 0.5, p_hi - p_lo, q_lo - q_hi)


@dataclass(frozen=True)
class OettSlots:
    """Per child, the intervals of optimism over which the choice set is fixed.

    Slot ``j`` adds the ``j`` cheapest unlisted schools (by cutoff gap) to the
    listed ones and covers optimism in ``[lower[:, j], lower[:, j+1])``.
    """

    threshold: np.ndarray
    order: np.ndarray
    lower: np.ndarray
    mass: np.ndarray


def oett_slots(data: EstimationDataset, psi: OptimismParams) -> OettSlots:
    if data.cutoffs is None or data.scores is None:
        raise InputError("optimistic truth-telling needs cutoffs and scores")
    gap = np.asarray(data.cutoffs, dtype=float) - np.asarray(data.scores, dtype=float)[:, None]
    listed = data.position >= 0
    top = np.where(listed, gap, -np.inf).max(axis=1, initial=-np.inf)
    threshold = np.maximum(top, 0.0)
    free_gap = np.where(~listed & data.available, gap, np.inf)
    order = np.argsort(free_gap, axis=1, kind="stable")
    sorted_gap = np.take_along_axis(free_gap, order, axis=1)
    lower = np.maximum(threshold[:, None], np.concatenate([np.full((data.n, 1), -np.inf), sorted_gap], axis=1))
    lower = np.concatenate([lower, np.full((data.n, 1), np.inf)], axis=1)
    mass = _interval_mass(lower[:, :-1], lower[:, 1:], psi.kappa, psi.lam)
    mass = np.where(lower[:, 1:] > lower[:, :-1], np.maximum(mass, 0.0), 0.0)
    return OettSlots(threshold, order, lower, mass)


def loglik_oett(theta: Theta, data: EstimationDataset, psi: OptimismParams | None = None, want_grad: bool = False):
    """Optimistic truth-telling with the optimism degree integrated out exactly.

    Over each slot the integrand is a constant exploded-logit product, so the
    integral is a finite mass-weighted sum.
    """
    psi = psi if psi is not None else theta.psi
    if psi is None:
        raise InputError("optimistic truth-telling needs optimism parameters")
    U, E, c = _scaled_utilities(theta, data)
    R, valid, EL, tail = _listed(E, data)
    slots = oett_slots(data, psi)
    E_free = np.where(data.position < 0, E, 0.0)
    E_sorted = np.take_along_axis(E_free, slots.order, axis=1)
    added = np.concatenate([np.zeros((data.n, 1)), np.cumsum(E_sorted, axis=1)], axis=1)
    den = tail[:, None, :] + added[:, :, None]
    den = np.where(valid[:, None, :], den, 1.0)
    with np.errstate(divide="ignore"):
        log_mass = np.log(slots.mass)
    g = log_mass - np.log(den).sum(axis=2)
    logEL = np.where(valid, np.log(np.where(valid, EL, 1.0)), 0.0)
    lse = logsumexp(g, axis=1)
    bad = ~np.isfinite(lse)
    if bad.any():
        warnings.warn(
            f"{int(bad.sum())} children have zero probability under the optimism model",
            DataInconsistencyWarning,
            stacklevel=2,
        )
    ll = logEL.sum(axis=1) + lse
    value = float(ll.sum())
    if not want_grad:
        return value
    ok = ~bad
    p = np.zeros_like(g)
    p[ok] = np.exp(g[ok] - lse[ok, None])
    inv = np.where(valid[:, None, :], 1.0 / den, 0.0)
    cuminv = np.cumsum(inv, axis=2)
    # listed facility at rank k: sum_j p_j * cuminv_j[k]
    w_rank = np.einsum("ij,ijk->ik", p, cuminv)
    pos = data.position
    at_pos = np.take_along_axis(w_rank, np.maximum(pos, 0), axis=1)
    last_idx = np.maximum(data.lengths - 1, 0)
    last = cuminv[np.arange(data.n), :, last_idx] * (data.lengths > 0)[:, None]
    suffix = np.cumsum((p * last)[:, ::-1], axis=1)[:, ::-1]
    # the m-th cheapest unlisted school is present from slot m + 1 on
    G_unlisted = np.zeros_like(E)
    np.put_along_axis(G_unlisted, slots.order, -E_sorted * suffix[:, 1:], axis=1)
    G = np.where(pos >= 0, 1.0 - E * at_pos, G_unlisted)
    G[bad] = 0.0
    lo, hi = slots.lower[:, :-1], slots.lower[:, 1:]
    live = slots.mass > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        dk = np.where(live, (_dP_da(psi.kappa, psi.lam * hi) - _dP_da(psi.kappa, psi.lam * lo)) / slots.mass, 0.0)
        dl = np.where(live, (_dP_dlam(psi.kappa, psi.lam, hi) - _dP_dlam(psi.kappa, psi.lam, lo)) / slots.mass, 0.0)
    grad_psi = np.array([(p * dk).sum(), (p * dl).sum()])
    return value, np.concatenate([_theta_grad(G, data), grad_psi])
