"""Welfare statistics, border flags, improvement decomposition and fit scores."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .behavior import Assumption, BehaviorSpec, OptimismParams, TrueUtilities, construct_rols, sample_gamma, sample_gumbel
from .errors import DecompositionUndefined, DomainError, InputError
from .estimation.outside import OutsideOptionEstimate, fit_interval_mle, simulated_intervals
from .market import UNMATCHED, Matching, MarketInstance, RegionScheme, outcome_ranks, weakly_dominates
from .mechanisms import serial_dictatorship

CELLS = ("border_interregional", "border_local", "nonborder_interregional", "nonborder_local")


@dataclass(frozen=True)
class WelfareStats:
    n: int
    match_rate: float
    interregional_match_rate: float
    avg_rank: float
    avg_utility: float
    improved_ratio: float = float("nan")


@dataclass(frozen=True)
class ImprovementDecomposition:
    shares: dict[str, float]
    multiplier: float
    n_improved: int


def _same_market(matching: Matching, market: MarketInstance, what: str) -> None:
    if matching.n_students != market.n_students or matching.n_schools != market.n_schools:
        raise InputError(f"{what} does not belong to this market")


def _ranks(matching: Matching, market: MarketInstance, rols: Sequence[Sequence[int]] | None) -> np.ndarray:
    if rols is not None:
        market = market.with_preferences(rols)
    return outcome_ranks(matching, market)


def interregional(matching: Matching, scheme: RegionScheme) -> np.ndarray:
    """Children matched to a school outside their home region."""
    a = matching.assign
    matched = a != UNMATCHED
    out = np.zeros(a.size, dtype=bool)
    out[matched] = scheme.school_region[a[matched]] != scheme.student_region[matched]
    return out


def improved(
    matching: Matching, baseline: Matching, market: MarketInstance, rols: Sequence[Sequence[int]] | None = None
) -> np.ndarray:
    """Children strictly preferring their outcome in ``matching`` to the one in ``baseline``."""
    _same_market(baseline, market, "baseline")
    return _ranks(matching, market, rols) < _ranks(baseline, market, rols)


def welfare_stats(
    matching: Matching,
    market: MarketInstance,
    true_utilities: TrueUtilities,
    scheme: RegionScheme,
    *,
    rols: Sequence[Sequence[int]] | None = None,
    baseline: Matching | None = None,
    population: np.ndarray | None = None,
) -> WelfareStats:
    """Summary over the children selected by the boolean mask ``population``.

    Unmatched children count at rank |list| + 1 and at their outside-option utility.
    """
    _same_market(matching, market, "matching")
    mask = np.ones(market.n_students, dtype=bool) if population is None else np.asarray(population, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        nan = float("nan")
        return WelfareStats(0, nan, nan, nan, nan, nan)
    ranks = _ranks(matching, market, rols) + 1
    util = true_utilities.of(matching.assign)
    gain = float("nan")
    if baseline is not None:
        gain = float(improved(matching, baseline, market, rols)[mask].mean())
    return WelfareStats(
        n=n,
        match_rate=float((matching.assign[mask] != UNMATCHED).mean()),
        interregional_match_rate=float(interregional(matching, scheme)[mask].mean()),
        avg_rank=float(ranks[mask].mean()),
        avg_utility=float(util[mask].mean()),
        improved_ratio=gain,
    )


def border_classification(
    subdivision_of_child: Sequence[int], border_fraction: Mapping[int, float] | np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Flag each child as a border child with her subdivision's border fraction as probability."""
    sub = np.asarray(subdivision_of_child, dtype=np.int64)
    if isinstance(border_fraction, Mapping):
        x = np.array([border_fraction[int(k)] for k in sub], dtype=float)
    else:
        x = np.asarray(border_fraction, dtype=float)[sub]
    if ((x < 0) | (x > 1)).any():
        raise DomainError("border fractions must lie in [0, 1]")
    return rng.random(sub.size) < x


def multiplier(interregional_share: float, local_share: float) -> float:
    """Improved children per improved child with an interregional match."""
    if interregional_share <= 0:
        raise DecompositionUndefined("no improved child has an interregional match")
    return (interregional_share + local_share) / interregional_share


def improvement_decomposition(
    mechanism: Matching,
    baseline: Matching,
    border: np.ndarray,
    scheme: RegionScheme,
    market: MarketInstance,
    rols: Sequence[Sequence[int]] | None = None,
) -> ImprovementDecomposition:
    """Split improved children by border status and by whether their new match crosses a region boundary."""
    _same_market(mechanism, market, "matching")
    if rols is not None:
        market = market.with_preferences(rols)
    if not weakly_dominates(mechanism, baseline, market):
        raise DecompositionUndefined("mechanism outcome does not weakly dominate the baseline")
    up = improved(mechanism, baseline, market)
    total = int(up.sum())
    if total == 0:
        raise DecompositionUndefined("no child improves")
    border = np.asarray(border, dtype=bool)
    cross = interregional(mechanism, scheme)
    counts = {
        "border_interregional": int((up & border & cross).sum()),
        "border_local": int((up & border & ~cross).sum()),
        "nonborder_interregional": int((up & ~border & cross).sum()),
        "nonborder_local": int((up & ~border & ~cross).sum()),
    }
    shares = {k: v / total for k, v in counts.items()}
    inter = counts["border_interregional"] + counts["nonborder_interregional"]
    return ImprovementDecomposition(shares, multiplier(inter, total - inter), total)


def travel_time_equivalent(delta_utility: float, beta_hat: float) -> float:
    """Utility difference expressed as a percent cut in travel time (log-distance utility)."""
    if beta_hat <= 0:
        raise DomainError("beta_hat must be positive")
    return 100.0 * delta_utility / beta_hat


@dataclass(frozen=True)
class SubdivisionRow:
    subdivision: int
    n: int
    interregional_rate: float
    utility_improvement: float


def subdivision_stats(
    mechanism: Matching,
    baseline: Matching,
    true_utilities: TrueUtilities,
    subdivision_of_child: Sequence[int],
    scheme: RegionScheme,
) -> list[SubdivisionRow]:
    """Per-subdivision interregional rate and mean utility change against the baseline."""
    sub = np.asarray(subdivision_of_child, dtype=np.int64)
    delta = true_utilities.of(mechanism.assign) - true_utilities.of(baseline.assign)
    cross = interregional(mechanism, scheme)
    rows = []
    for k in np.unique(sub):
        m = sub == k
        rows.append(SubdivisionRow(int(k), int(m.sum()), float(cross[m].mean()), float(delta[m].mean())))
    return rows


# ---------------------------------------------------------------------------
# Goodness of fit


def area_level_fit(
    simulated: Matching,
    actual: Matching,
    area_of_school: Sequence[int],
    school_ages: Sequence[int],
    age_populations: Mapping[int, float] | None = None,
    weighted: bool = True,
) -> float:
    """Mean absolute gap between simulated and actual matched counts per (age, area).

    A matched child has her school's age, so cells are keyed by school age
    and area. Weighted: per-age mean over areas, averaged with weights
    proportional to ``age_populations`` (default: children matched at each
    age in ``actual``). Unweighted: plain mean over all cells.
    """
    if simulated.n_students != actual.n_students or simulated.n_schools != actual.n_schools:
        raise InputError("matchings belong to different markets")
    area = np.asarray(area_of_school, dtype=np.int64)
    ages = np.asarray(school_ages, dtype=np.int64)
    if area.size != simulated.n_schools or ages.size != simulated.n_schools:
        raise InputError("area or age table does not cover every school")
    age_values, a_idx = np.unique(ages, return_inverse=True)
    areas, r_idx = np.unique(area, return_inverse=True)

    def counts(mu: Matching) -> np.ndarray:
        out = np.zeros((age_values.size, areas.size))
        s = mu.assign[mu.assign != UNMATCHED]
        np.add.at(out, (a_idx[s], r_idx[s]), 1.0)
        return out

    actual_counts = counts(actual)
    diff = np.abs(counts(simulated) - actual_counts)
    if not weighted:
        return float(diff.mean())
    if age_populations is None:
        w = actual_counts.sum(axis=1)
    else:
        w = np.array([float(age_populations.get(int(a), 0.0)) for a in age_values])
    if w.sum() <= 0:
        raise InputError("age weights sum to zero")
    return float((w / w.sum()) @ diff.mean(axis=1))


@dataclass(frozen=True)
class GoodnessOfFit:
    score: float
    per_run: np.ndarray
    outside: OutsideOptionEstimate | None


def goodness_of_fit(
    market: MarketInstance,
    actual: Matching,
    mean_utility: np.ndarray,
    spec: BehaviorSpec,
    area_of_school: Sequence[int],
    rng: np.random.Generator,
    *,
    runs: int = 100,
    master_order: Sequence[int] | None = None,
    lengths: np.ndarray | None = None,
    cutoffs: np.ndarray | None = None,
    scores: np.ndarray | None = None,
    psi: OptimismParams | None = None,
    calibrate_outside: bool = True,
    ell: int = 5,
    weighted: bool = True,
) -> GoodnessOfFit:
    """Simulated-versus-actual placement error averaged over ``runs`` draws.

    ``mean_utility`` is children x schools, -inf where a school is
    unavailable. With ``calibrate_outside`` the outside option's mean is
    first estimated from ``runs`` separate draws and subtracted from every
    school. Each scored run then draws shocks, forms lists under ``spec``,
    runs serial dictatorship in ``master_order`` and compares placements
    by :func:`area_level_fit`.
    """
    V = np.asarray(mean_utility, dtype=float)
    n, m = V.shape
    if (n, m) != (market.n_students, market.n_schools):
        raise InputError("mean utility matrix does not match the market")
    oett = spec.assumption is Assumption.OETT
    if oett and (cutoffs is None or scores is None or psi is None):
        raise InputError("OETT fit needs cutoffs, scores and optimism parameters")
    available = np.isfinite(V)
    order = np.arange(n) if master_order is None else np.asarray(master_order, dtype=np.int64)
    K = market.rol_length if lengths is None else np.asarray(lengths, dtype=np.int64)
    age_weights = {int(a): float(c) for a, c in zip(*np.unique(market.student_age, return_counts=True))}

    outside_est = None
    shift = 0.0
    if calibrate_outside:
        upper, lower = simulated_intervals(
            np.where(available, V, 0.0), available, K, rng, runs, ell,
            cutoffs=cutoffs, scores=scores, psi=psi if oett else None,
        )
        outside_est = fit_interval_mle(upper, lower)
        if not outside_est.divergent:
            shift = outside_est.alpha_bar

    per_run = np.empty(runs)
    for r in range(runs):
        U = np.where(available, V - shift + sample_gumbel(rng, (n, m)), -np.inf)
        outside = sample_gumbel(rng, n)
        nu = sample_gamma(psi, rng, n) if oett else None
        rols = construct_rols(
            U, outside, spec, rng, available=available, cutoffs=cutoffs, scores=scores, optimism=nu, lengths=K
        )
        sim = serial_dictatorship(order, rols, market.capacity)
        per_run[r] = area_level_fit(sim, actual, area_of_school, market.school_age, age_weights, weighted)
    return GoodnessOfFit(float(per_run.mean()) if runs else float("nan"), per_run, outside_est)
