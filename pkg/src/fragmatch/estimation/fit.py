"""Estimation driver: parameter packing, quasi-Newton search, standard errors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..behavior import OptimismParams
from ..errors import ConvergenceError
from .data import EstimationDataset
from .gmm import gmm_objective_uss
from .likelihood import Theta, loglik_oett, loglik_stt, loglik_wtt


class Model(str, enum.Enum):
    STT = "stt"
    WTT = "wtt"
    OETT = "oett"
    USS = "uss"


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 2000
    ftol: float = 1e-8
    gtol: float = 1e-5
    standard_errors: bool = False
    bootstrap: int = 0
    seed: int = 0
    start: Theta | None = None
    pair_mask: np.ndarray | None = None


@dataclass
class FitResult:
    model: Model
    theta: Theta
    objective: float
    grad_norm: float
    iterations: int
    facility_ids: np.ndarray
    reference: int | None
    se: np.ndarray | None = None
    message: str = ""
    trace: list[float] = field(default_factory=list)


class _Packing:
    """Free parameters: beta, the unpinned qualities, and log kappa / log lambda."""

    def __init__(self, model: Model, n_facilities: int):
        self.model = model
        self.F = n_facilities
        # list-only models cannot separate a common quality shift, so one facility is pinned
        self.reference = 0 if model in (Model.WTT, Model.OETT) else None
        self.free_alpha = np.array([f for f in range(n_facilities) if f != self.reference], dtype=np.int64)
        self.with_psi = model is Model.OETT

    @property
    def size(self) -> int:
        return 1 + len(self.free_alpha) + (2 if self.with_psi else 0)

    def theta(self, z: np.ndarray) -> Theta:
        alpha = np.zeros(self.F)
        alpha[self.free_alpha] = z[1 : 1 + len(self.free_alpha)]
        psi = None
        if self.with_psi:
            psi = OptimismParams(float(np.exp(z[-2])), float(np.exp(z[-1])))
        return Theta(float(z[0]), alpha, psi)

    def pack(self, theta: Theta) -> np.ndarray:
        tail = [np.log(theta.psi.kappa), np.log(theta.psi.lam)] if self.with_psi else []
        return np.concatenate([[theta.beta], np.asarray(theta.alpha)[self.free_alpha], tail])

    def natural(self, z: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=float)
        if self.with_psi:
            out[-2:] = np.exp(out[-2:])
        return out

    def reduce_grad(self, full: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Full gradient (beta, all alpha, [kappa, lam]) to the free coordinates."""
        g = np.concatenate([[full[0]], full[1 + self.free_alpha]])
        if self.with_psi:
            g = np.concatenate([g, full[-2:] * np.exp(z[-2:])])
        return g


def objective_function(model: Model | str, data: EstimationDataset, pair_mask: np.ndarray | None = None):
    """(theta, want_grad) -> value to minimize: negative log-likelihood or the moment objective."""
    model = Model(model)

    def f(theta: Theta, want_grad: bool = False):
        if model is Model.USS:
            return gmm_objective_uss(theta, data, want_grad, pair_mask)
        fn = {Model.STT: loglik_stt, Model.WTT: loglik_wtt, Model.OETT: loglik_oett}[model]
        out = fn(theta, data, want_grad=want_grad)
        if want_grad:
            return -out[0], -out[1]
        return -out

    return f


def _default_start(model: Model, data: EstimationDataset, pack: _Packing) -> Theta:
    psi = None
    if model is Model.OETT:
        gaps = np.asarray(data.cutoffs) - np.asarray(data.scores)[:, None]
        scale = float(np.median(gaps[gaps > 0])) if (gaps > 0).any() else 1.0
        psi = OptimismParams(1.0, 1.0 / max(scale, 1e-3))
    return Theta(0.0, np.zeros(pack.F), psi)


def _minimize(fun, z0: np.ndarray, config: FitConfig, n_scale: float):
    trace: list[float] = []
    best = {"z": z0.copy(), "v": np.inf}

    def wrapped(z):
        v, g = fun(z)
        v, g = v / n_scale, g / n_scale
        if np.isfinite(v) and v < best["v"]:
            best["z"], best["v"] = z.copy(), v
        trace.append(float(v))
        return v, g

    res = minimize(
        wrapped, z0, jac=True, method="L-BFGS-B",
        options={"maxiter": config.max_iter, "ftol": config.ftol * 1e-2, "gtol": config.gtol * 1e-2, "maxcor": 20},
    )
    return res, best, trace


def fit(model: Model | str, data: EstimationDataset, config: FitConfig | None = None) -> FitResult:
    """Maximize the likelihood (or minimize the moment objective) of ``model`` on ``data``.

    Facilities nobody lists are dropped first. Raises ConvergenceError with
    the best iterate if the search stops short of its tolerances.
    """
    model = Model(model)
    config = config or FitConfig()
    data = data.drop_unlisted()
    pack = _Packing(model, data.n_facilities)
    obj = objective_function(model, data, config.pair_mask)
    start = config.start if config.start is not None else _default_start(model, data, pack)
    z0 = pack.pack(start)
    # likelihoods are scaled per child; the moment objective is already an average
    n_scale = 1.0 if model is Model.USS else float(data.n)

    def fun(z):
        v, g = obj(pack.theta(z), True)
        return v, pack.reduce_grad(g, z)

    res, best, trace = _minimize(fun, z0, config, n_scale)
    grad_norm = float(np.abs(res.jac).max()) if res.jac is not None else np.inf
    ok = bool(res.success) or (np.isfinite(res.fun) and grad_norm < max(config.gtol, 1e-4))
    if not ok:
        raise ConvergenceError(
            f"{model.value}: optimizer stopped ({res.message}) with gradient norm {grad_norm:.3g}",
            best_x=pack.theta(best["z"]),
            best_value=float(best["v"]),
            result=res,
        )
    theta = pack.theta(res.x)
    out = FitResult(
        model=model,
        theta=theta,
        objective=float(res.fun * n_scale),
        grad_norm=grad_norm,
        iterations=int(res.nit),
        facility_ids=np.asarray(data.facility_ids),
        reference=pack.reference,
        message=str(res.message),
        trace=trace,
    )
    if model is Model.USS and config.bootstrap > 0:
        out.se = bootstrap_se(data, theta, config)
    elif config.standard_errors and model is not Model.USS:
        out.se = hessian_se(obj, theta, pack)
    return out


def hessian_se(obj, theta: Theta, pack: _Packing, h: float = 1e-5) -> np.ndarray:
    """Standard errors from the inverse numerical Hessian of the negative log-likelihood.

    Differences are taken in the natural parameters (kappa and lambda, not
    their logs); the pinned quality gets no entry.
    """
    x = pack.natural(pack.pack(theta))

    def grad_at(x_nat: np.ndarray) -> np.ndarray:
        z = x_nat.copy()
        if pack.with_psi:
            z[-2:] = np.log(z[-2:])
        g = obj(pack.theta(z), True)[1]
        return np.concatenate([[g[0]], g[1 + pack.free_alpha], g[-2:] if pack.with_psi else []])

    k = x.size
    H = np.empty((k, k))
    for j in range(k):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        H[:, j] = (grad_at(xp) - grad_at(xm)) / (2 * step)
    H = 0.5 * (H + H.T)
    cov = np.linalg.pinv(H)
    return np.sqrt(np.maximum(np.diag(cov), 0.0))


def bootstrap_se(data: EstimationDataset, theta: Theta, config: FitConfig) -> np.ndarray:
    """Seeded nonparametric bootstrap over children for the moment estimator."""
    rng = np.random.default_rng(config.seed)
    pack = _Packing(Model.USS, data.n_facilities)
    draws = []
    inner = FitConfig(max_iter=config.max_iter, ftol=config.ftol, gtol=config.gtol, start=theta,
                      pair_mask=config.pair_mask)
    for _ in range(config.bootstrap):
        rows = rng.integers(0, data.n, data.n)
        sample = data.subset(rows)
        try:
            res = fit(Model.USS, sample, inner)
        except ConvergenceError as err:
            res_theta = err.best_x
        else:
            res_theta = res.theta
        if res_theta.alpha.shape != theta.alpha.shape:
            continue
        draws.append(pack.pack(res_theta))
    if len(draws) < 2:
        return np.full(pack.size, np.nan)
    return np.asarray(draws).std(axis=0, ddof=1)
