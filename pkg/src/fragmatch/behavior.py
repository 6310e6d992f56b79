"""Utilities, random shocks, benchmark cutoffs and ROL construction.

This is the data-generating side of the preference model: given mean
utilities and a reporting assumption it produces the lists a child submits.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError
from .market import AgeSchool, Matching, MarketInstance, Student

EARTH_RADIUS_KM = 6371.0088


class UtilityForm(str, enum.Enum):
    LINEAR = "linear"
    LOG = "log"


class DistanceMetric(str, enum.Enum):
    STRAIGHT_LINE_KM = "line"
    TRAVEL_TIME_MIN = "time"


class Assumption(str, enum.Enum):
    STT = "stt"
    WTT = "wtt"
    OETT = "oett"
    USS = "uss"


class LengthPolicy(str, enum.Enum):
    OBSERVED = "observed"
    EMPIRICAL_DRAW = "empirical"


@dataclass(frozen=True)
class UtilityParams:
    beta: float
    alpha: Mapping[int, float] | np.ndarray
    alpha_outside: float = 0.0
    form: UtilityForm = UtilityForm.LINEAR
    metric: DistanceMetric = DistanceMetric.STRAIGHT_LINE_KM

    def alpha_of(self, facility: int) -> float:
        return float(self.alpha[facility])


@dataclass(frozen=True)
class OptimismParams:
    """Gamma distribution of the optimism degree, with shape ``kappa`` and rate ``lam``."""

    kappa: float
    lam: float

    def __post_init__(self) -> None:
        if not (self.kappa > 0 and self.lam > 0):
            raise DomainError(f"optimism parameters must be positive, got kappa={self.kappa}, lam={self.lam}")

    @property
    def mean(self) -> float:
        return self.kappa / self.lam

    @property
    def var(self) -> float:
        return self.kappa / self.lam**2


@dataclass(frozen=True)
class BehaviorSpec:
    assumption: Assumption
    k_max: int = 10
    length_policy: LengthPolicy = LengthPolicy.OBSERVED
    # probabilities of list lengths 1, 2, ...; used by EMPIRICAL_DRAW
    length_distribution: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise InputError(f"k_max must be at least 1, got {self.k_max}")

    def draw_length(self, rng: np.random.Generator, size: int | None = None):
        if not self.length_distribution:
            return self.k_max if size is None else np.full(size, self.k_max, dtype=np.int64)
        p = np.asarray(self.length_distribution, dtype=float)
        draws = rng.choice(len(p), size=size, p=p / p.sum()) + 1
        return np.minimum(draws, self.k_max)


# ---------------------------------------------------------------------------
# Distances


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


class TravelMatrix:
    """Sparse lookup of travel minutes keyed by (student id, facility id)."""

    def __init__(self, entries: Mapping[tuple[int, int], float]):
        self.entries = dict(entries)

    def __getitem__(self, key: tuple[int, int]) -> float:
        try:
            return self.entries[key]
        except KeyError:
            raise InputError(f"no travel time for student {key[0]}, facility {key[1]}") from None

    def dense(self, student_ids: Sequence[int], facility_ids: Sequence[int]) -> np.ndarray:
        return np.array([[self[i, f] for f in facility_ids] for i in student_ids], dtype=float)


def distance(
    student: Student,
    school: AgeSchool,
    metric: DistanceMetric | str = DistanceMetric.STRAIGHT_LINE_KM,
    travel: TravelMatrix | None = None,
) -> float:
    metric = DistanceMetric(metric)
    if metric is DistanceMetric.TRAVEL_TIME_MIN:
        if travel is None:
            raise InputError("travel-time metric requires a travel matrix")
        return float(travel[student.id, school.facility])
    return float(haversine_km(student.lat, student.lon, school.lat, school.lon))


def covariate(d: np.ndarray | float, form: UtilityForm | str):
    """The distance term entering utility: d itself, or log d."""
    form = UtilityForm(form)
    if form is UtilityForm.LINEAR:
        return d
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("log utility requires strictly positive distances")
    return np.log(d)


def mean_utility(d: float, alpha: float, beta: float, form: UtilityForm | str = UtilityForm.LINEAR) -> float:
    """Systematic utility alpha - beta * d (linear) or alpha - beta * log d."""
    return float(alpha - beta * covariate(d, form))


def market_distances(
    market: MarketInstance,
    metric: DistanceMetric | str = DistanceMetric.STRAIGHT_LINE_KM,
    travel: TravelMatrix | None = None,
) -> np.ndarray:
    """Student x age-school distance matrix."""
    metric = DistanceMetric(metric)
    if metric is DistanceMetric.TRAVEL_TIME_MIN:
        if travel is None:
            raise InputError("travel-time metric requires a travel matrix")
        return np.array(
            [[travel[st.id, sch.facility] for sch in market.schools] for st in market.students], dtype=float
        )
    slat = np.array([st.lat for st in market.students])[:, None]
    slon = np.array([st.lon for st in market.students])[:, None]
    clat = np.array([sch.lat for sch in market.schools])[None, :]
    clon = np.array([sch.lon for sch in market.schools])[None, :]
    return haversine_km(slat, slon, clat, clon)


@dataclass(frozen=True, eq=False)
class TrueUtilities:
    """Realized utilities: ``values[i, column[s]]`` for age-school ``s``, ``outside[i]`` when unmatched.

    Columns are usually facilities, since a child only ever ranks
    age-schools of her own age.
    """

    values: np.ndarray
    column: np.ndarray
    outside: np.ndarray

    def of(self, assign: np.ndarray) -> np.ndarray:
        assign = np.asarray(assign)
        rows = np.arange(assign.size)
        matched = assign >= 0
        out = np.array(self.outside, dtype=float)
        out[matched] = self.values[rows[matched], self.column[assign[matched]]]
        return out


# ---------------------------------------------------------------------------
# Shocks


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def sample_gumbel(rng: np.random.Generator, size=None):
    """Standard Gumbel draws by inverting F(x) = exp(-exp(-x))."""
    u = rng.random(size)
    # rng.random is on [0, 1); 0 would map to -inf
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    out = gumbel_from_uniform(u)
    return float(out) if size is None else out


def sample_gamma(params: OptimismParams, rng: np.random.Generator, size=None):
    """Gamma draws with shape kappa and rate lam (mean kappa / lam)."""
    return rng.gamma(params.kappa, 1.0 / params.lam, size)


# ---------------------------------------------------------------------------
# Cutoffs and choice sets


def benchmark_cutoffs(matching: Matching, market: MarketInstance, unfilled_value: float = 0.0) -> np.ndarray:
    """Per age-school: lowest roster score when full, else ``unfilled_value``.

    A school with capacity 0 never has a roster and gets ``unfilled_value``.
    """
    out = np.full(market.n_schools, float(unfilled_value))
    for s, roster in enumerate(matching.rosters):
        cap = market.schools[s].capacity
        if cap > 0 and len(roster) >= cap:
            out[s] = min(market.students[i].score for i in roster)
    return out


def choice_set(score: float, optimism: float, cutoffs: np.ndarray) -> np.ndarray:
    """Indices of schools whose cutoff minus the optimism degree is at most the score."""
    if optimism < 0:
        raise DomainError("optimism degree must be non-negative")
    return np.flatnonzero(np.asarray(cutoffs) - optimism <= score)


# ---------------------------------------------------------------------------
# ROL construction


def _resolve_length(spec: BehaviorSpec, k_i: int | None, rng: np.random.Generator) -> int:
    if k_i is not None:
        return min(int(k_i), spec.k_max)
    if spec.length_policy is LengthPolicy.EMPIRICAL_DRAW:
        return int(spec.draw_length(rng))
    return spec.k_max


def construct_rol(
    utilities: np.ndarray,
    outside: float,
    spec: BehaviorSpec,
    rng: np.random.Generator,
    *,
    cutoffs: np.ndarray | None = None,
    score: float | None = None,
    optimism: float | None = None,
    k_i: int | None = None,
) -> tuple[int, ...]:
    """The list a child submits given her utilities for each school and the outside option.

    Ties in utility are broken by uniform draws from ``rng``; one draw per
    school is consumed regardless of the assumption, so assumptions can be
    compared on identical streams.
    """
    u = np.asarray(utilities, dtype=float)
    tiebreak = rng.random(len(u))
    order = np.lexsort((tiebreak, -u))
    a = spec.assumption
    if a is Assumption.USS:
        return tuple(int(s) for s in order if u[s] > outside)
    if a is Assumption.STT:
        above = [int(s) for s in order if u[s] > outside]
        return tuple(above[: spec.k_max])
    k = _resolve_length(spec, k_i, rng)
    if a is Assumption.WTT:
        return tuple(int(s) for s in order[:k])
    if cutoffs is None or optimism is None or score is None:
        raise InputError("OETT lists need cutoffs, a score and an optimism draw")
    allowed = np.asarray(cutoffs) - optimism <= score
    return tuple(int(s) for s in order if allowed[s])[:k]


def construct_rols(
    utilities: np.ndarray,
    outside: np.ndarray | None,
    spec: BehaviorSpec,
    rng: np.random.Generator,
    *,
    available: np.ndarray | None = None,
    cutoffs: np.ndarray | None = None,
    scores: np.ndarray | None = None,
    optimism: np.ndarray | None = None,
    lengths: np.ndarray | None = None,
) -> list[tuple[int, ...]]:
    """Row-wise ``construct_rol`` over an (n x m) utility matrix.

    ``available`` masks schools a child cannot list at all (e.g. other ages).
    Per-row semantics match :func:`construct_rol`; the tie-break stream differs.
    """
    u = np.asarray(utilities, dtype=float)
    n, m = u.shape
    mask = np.ones((n, m), dtype=bool) if available is None else np.asarray(available, dtype=bool).copy()
    a = spec.assumption
    if a in (Assumption.STT, Assumption.USS):
        if outside is None:
            raise InputError(f"{a.value.upper()} lists need outside-option utilities")
        mask &= u > np.asarray(outside, dtype=float)[:, None]
    if a is Assumption.OETT:
        if cutoffs is None or optimism is None or scores is None:
            raise InputError("OETT lists need cutoffs, scores and optimism draws")
        cut = np.broadcast_to(np.asarray(cutoffs, dtype=float), (n, m))
        mask &= cut - np.asarray(optimism, dtype=float)[:, None] <= np.asarray(scores, dtype=float)[:, None]
    if a is Assumption.USS:
        k = np.full(n, m, dtype=np.int64)
    elif a is Assumption.STT:
        k = np.full(n, spec.k_max, dtype=np.int64)
    elif lengths is not None:
        k = np.minimum(np.asarray(lengths, dtype=np.int64), spec.k_max)
    elif spec.length_policy is LengthPolicy.EMPIRICAL_DRAW:
        k = np.asarray(spec.draw_length(rng, n), dtype=np.int64)
    else:
        k = np.full(n, spec.k_max, dtype=np.int64)
    tiebreak = rng.random((n, m))
    key = np.where(mask, -u, np.inf)
    order = np.lexsort((tiebreak, key), axis=-1)
    count = np.minimum(mask.sum(axis=1), k)
    return [tuple(order[i, : count[i]].tolist()) for i in range(n)]
