"""Synthetic daycare markets: applicants per ward and age, addresses,
facility qualities, utilities, truthful lists and priorities."""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .behavior import (
    Assumption,
    BehaviorSpec,
    DistanceMetric,
    OptimismParams,
    TrueUtilities,
    UtilityForm,
    construct_rols,
    covariate,
    haversine_km,
    sample_gumbel,
)
from .errors import InputError
from .market import AGES, AgeSchool, MarketInstance, MasterPriorities, Student
from .mechanisms import serial_dictatorship
from .rng import run_rng

# Applicants per age and total daycare users in the reference ward.
REFERENCE_APPLICANTS = (515, 640, 216, 196, 78, 36)
REFERENCE_USERS = 6253
REFERENCE_KAPPA = tuple(a / REFERENCE_USERS for a in REFERENCE_APPLICANTS)
# Vacant seats per age in the reference ward, used to shape capacity by age.
REFERENCE_SEATS = (713, 563, 213, 217, 347, 264)
# Daycare users, facilities and wards of the full-size city that grid_city scales down.
CITY_USERS = 227_163
CITY_FACILITIES = 2_817
CITY_WARDS = 23


class AlphaMode(str, enum.Enum):
    POOL = "pool"
    EXPLICIT = "explicit"


class PriorityMode(str, enum.Enum):
    LOCALS_FAVORED = "locals"
    MASTER_DIRECT = "master"


@dataclass(frozen=True)
class Subdivision:
    id: int
    region: int
    lat: float
    lon: float
    population: float
    border_fraction: float = 0.0


@dataclass(frozen=True)
class Facility:
    id: int
    region: int
    lat: float
    lon: float
    capacity: tuple[int, ...]
    alpha: float | None = None


@dataclass(frozen=True, eq=False)
class GenConfig:
    subdivisions: tuple[Subdivision, ...]
    facilities: tuple[Facility, ...]
    ward_users: dict[int, int]
    kappa: tuple[float, ...] = REFERENCE_KAPPA
    alpha_mode: AlphaMode = AlphaMode.POOL
    alpha_pool: tuple[float, ...] = ()
    beta: float = 3.945
    form: UtilityForm = UtilityForm.LOG
    metric: DistanceMetric = DistanceMetric.TRAVEL_TIME_MIN
    # travel minutes are approximated as offset + per_km * straight-line km
    time_offset: float = 5.0
    minutes_per_km: float = 6.0
    min_km: float = 0.05
    m4_priority: PriorityMode = PriorityMode.LOCALS_FAVORED
    seed: int = 0
    runs: int = 100
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.kappa) != len(AGES) or any(k < 0 for k in self.kappa):
            raise InputError("kappa needs six non-negative entries")
        if any(u < 0 for u in self.ward_users.values()):
            raise InputError("ward users must be non-negative")
        if any(s.population < 0 for s in self.subdivisions):
            raise InputError("subdivision populations must be non-negative")
        if self.alpha_mode is AlphaMode.POOL and not self.alpha_pool:
            raise InputError("quality pool is empty")
        if self.alpha_mode is AlphaMode.EXPLICIT and any(f.alpha is None for f in self.facilities):
            raise InputError("explicit qualities missing for some facilities")
        ids = [f.id for f in self.facilities]
        if ids != list(range(len(ids))):
            raise InputError("facility ids must be 0..F-1 in order")

    @cached_property
    def regions(self) -> list[int]:
        return sorted(self.ward_users)

    @cached_property
    def subdivision_distance(self) -> np.ndarray:
        """Subdivision x facility distance in the configured metric."""
        lat = np.array([s.lat for s in self.subdivisions])[:, None]
        lon = np.array([s.lon for s in self.subdivisions])[:, None]
        flat = np.array([f.lat for f in self.facilities])[None, :]
        flon = np.array([f.lon for f in self.facilities])[None, :]
        km = np.maximum(haversine_km(lat, lon, flat, flon), self.min_km)
        if self.metric is DistanceMetric.TRAVEL_TIME_MIN:
            return self.time_offset + self.minutes_per_km * km
        return km

    def applicant_counts(self) -> dict[tuple[int, int], int]:
        return {
            (w, a): scale_applicants(self.ward_users[w], self.kappa[a]) for w in self.regions for a in AGES
        }


def scale_applicants(ward_users: int, kappa_a: float) -> int:
    """Ward users times the age's applicant ratio, rounded half up."""
    if ward_users < 0 or kappa_a < 0:
        raise InputError("applicant scaling needs non-negative inputs")
    return int(math.floor(ward_users * kappa_a + 0.5 + 1e-9))


def sample_addresses(populations: Sequence[float], n: int, rng: np.random.Generator) -> np.ndarray:
    """Subdivision index per child, drawn proportionally to population."""
    p = np.asarray(populations, dtype=float)
    if p.size == 0 or p.sum() <= 0:
        raise InputError("all subdivision populations are zero")
    return rng.choice(p.size, size=n, p=p / p.sum())


def draw_school_quality(
    alpha_pool: Sequence[float],
    facilities: Sequence[Facility],
    rng: np.random.Generator,
    mode: AlphaMode = AlphaMode.POOL,
) -> np.ndarray:
    """Quality per facility: uniform draws with replacement from the pool, or the facilities' own values."""
    if mode is AlphaMode.EXPLICIT:
        return np.array([f.alpha for f in facilities], dtype=float)
    pool = np.asarray(alpha_pool, dtype=float)
    if pool.size == 0:
        raise InputError("quality pool is empty")
    return pool[rng.integers(0, pool.size, size=len(facilities))]


def build_priorities(
    master: Sequence[int], market: MarketInstance, mode: PriorityMode = PriorityMode.LOCALS_FAVORED
) -> MasterPriorities:
    """School priorities from a master order of student ids (highest first).

    Locals-favored moves each school's regional residents ahead of everyone
    else, keeping master order within both groups.
    """
    master = np.asarray(master, dtype=np.int64)
    if sorted(master.tolist()) != list(range(market.n_students)):
        raise InputError("master order must be a permutation of all students")
    rank = np.empty(market.n_students, dtype=np.int64)
    rank[master] = np.arange(market.n_students)
    return MasterPriorities.from_market(market, rank, locals_favored=mode is PriorityMode.LOCALS_FAVORED)


@dataclass(frozen=True, eq=False)
class SyntheticMarket:
    market: MarketInstance
    utilities: TrueUtilities
    subdivision: np.ndarray
    master: np.ndarray
    priorities: MasterPriorities
    m4_priorities: MasterPriorities
    alpha: np.ndarray
    config: GenConfig


def generate_market(config: GenConfig, run_index: int, rng: np.random.Generator | None = None) -> SyntheticMarket:
    """One synthetic market. Draw order: addresses (ward by ward, age by age),
    facility qualities, master order, then shocks and list tie-breaks."""
    rng = rng if rng is not None else run_rng(config.seed, run_index)
    counts = config.applicant_counts()
    sub_region = np.array([s.region for s in config.subdivisions])
    sub_pop = np.array([s.population for s in config.subdivisions], dtype=float)
    ages, regions, subs = [], [], []
    for w in config.regions:
        members = np.flatnonzero(sub_region == w)
        for a in AGES:
            k = counts[w, a]
            if k == 0:
                continue
            if members.size == 0:
                raise InputError(f"region {w} has applicants but no subdivisions")
            subs.append(members[sample_addresses(sub_pop[members], k, rng)])
            ages.append(np.full(k, a))
            regions.append(np.full(k, w))
    age = np.concatenate(ages) if ages else np.zeros(0, dtype=np.int64)
    home = np.concatenate(regions) if regions else np.zeros(0, dtype=np.int64)
    sub = np.concatenate(subs) if subs else np.zeros(0, dtype=np.int64)
    n = age.size
    alpha = draw_school_quality(config.alpha_pool, config.facilities, rng, config.alpha_mode)
    master = rng.permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[master] = np.arange(n)

    schools: list[AgeSchool] = []
    school_of = np.full((len(AGES), len(config.facilities)), -1, dtype=np.int64)
    for f in config.facilities:
        for a in AGES:
            if f.capacity[a] > 0:
                school_of[a, f.id] = len(schools)
                schools.append(AgeSchool(len(schools), f.id, a, f.region, int(f.capacity[a]), f.lat, f.lon))
    column = np.array([s.facility for s in schools], dtype=np.int64)

    x = covariate(config.subdivision_distance, config.form)
    offers = school_of[age] >= 0
    U = alpha[None, :] - config.beta * x[sub] + sample_gumbel(rng, (n, len(config.facilities)))
    U = np.where(offers, U, -np.inf)
    outside = sample_gumbel(rng, n)
    tiebreak = rng.random(U.shape)
    key = np.where(U > outside[:, None], -U, np.inf)
    order = np.lexsort((tiebreak, key), axis=-1)
    length = (U > outside[:, None]).sum(axis=1)

    students = []
    for i in range(n):
        facs = order[i, : length[i]]
        prefs = tuple(school_of[age[i], facs].tolist())
        lat, lon = config.subdivisions[sub[i]].lat, config.subdivisions[sub[i]].lon
        students.append(
            Student(i, int(age[i]), int(home[i]), prefs, score=0.0, tiebreak_rank=int(rank[i]) + 1,
                    lat=lat, lon=lon, subdivision=int(config.subdivisions[sub[i]].id))
        )
    market = MarketInstance(students, schools)
    pri = build_priorities(master, market, PriorityMode.LOCALS_FAVORED)
    pri4 = build_priorities(master, market, config.m4_priority)
    market = market.with_priorities(pri)
    return SyntheticMarket(
        market=market,
        utilities=TrueUtilities(U, column, outside),
        subdivision=sub,
        master=master,
        priorities=pri,
        m4_priorities=pri4,
        alpha=alpha,
        config=config,
    )


# ---------------------------------------------------------------------------
# Choice data for estimator checks


def choice_data(
    assumption: Assumption | str,
    rng: np.random.Generator,
    n: int = 2000,
    n_facilities: int = 10,
    beta: float = 3.3,
    k_max: int = 5,
    psi: OptimismParams = OptimismParams(2.0, 0.4),
    n_open: int = 6,
    cutoffs_follow_quality: bool = False,
    cutoff_range: tuple[float, float] = (5.0, 25.0),
):
    """Lists drawn under ``assumption`` for a single-age market.

    Qualities are N(0, 1), distances U(0.1, 2) km with linear utility,
    scores U(0, 20). The first ``n_open`` facilities have cutoff 0, the rest
    U(5, 25). With ``cutoffs_follow_quality`` the positive cutoffs go to the
    best facilities, sorted so better ones are harder to enter, as happens
    when demand tracks quality. List lengths for WTT/OETT are uniform on 1..k_max. For USS the
    children are also matched by serial dictatorship in score order with
    n / (2F) seats per facility, which fixes matches and reachable sets.
    Returns the dataset and the true qualities.
    """
    from .estimation.data import EstimationDataset

    assumption = Assumption(assumption)
    F = n_facilities
    alpha = rng.normal(0.0, 1.0, F)
    d = rng.uniform(0.1, 2.0, (n, F))
    U = alpha - beta * d + sample_gumbel(rng, (n, F))
    outside = sample_gumbel(rng, n)
    scores = rng.uniform(0.0, 20.0, n)
    cut = np.where(np.arange(F) < n_open, 0.0, rng.uniform(*cutoff_range, F))
    if cutoffs_follow_quality:
        by_quality = np.argsort(alpha)
        cut = np.zeros(F)
        cut[by_quality[n_open:]] = np.sort(rng.uniform(*cutoff_range, F - n_open))
    spec = BehaviorSpec(assumption, k_max=k_max)
    kw: dict = {}
    if assumption is Assumption.WTT:
        kw = dict(lengths=rng.integers(1, k_max + 1, n))
    elif assumption is Assumption.OETT:
        kw = dict(cutoffs=cut, scores=scores, optimism=rng.gamma(psi.kappa, 1.0 / psi.lam, n),
                  lengths=rng.integers(1, k_max + 1, n))
    rols = construct_rols(U, outside, spec, rng, **kw)
    extra: dict = {}
    if assumption is Assumption.USS:
        order = np.argsort(-scores, kind="stable")
        cap = np.full(F, max(1, n // (2 * F)))
        matching = serial_dictatorship(order.tolist(), rols, cap)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        reach = np.zeros((n, F), dtype=bool)
        for f in range(F):
            roster = matching.rosters[f]
            if len(roster) < cap[f]:
                reach[:, f] = True
            else:
                reach[:, f] = rank <= max(rank[j] for j in roster)
        extra = dict(matched=np.array(matching.assign), reachable=reach)
    data = EstimationDataset(rols=rols, distance=d, scores=scores, cutoffs=np.tile(cut, (n, 1)), k_max=k_max, **extra)
    return data, alpha


# ---------------------------------------------------------------------------
# Built-in layout


def grid_city(
    scale: float = 0.1,
    layout_seed: int = 20220401,
    *,
    grid: int = 5,
    ward_km: float = 5.2,
    subdivisions_per_side: int = 4,
    capacity_ratio: float = 1.4,
    capacity_spread: float = 0.3,
    age_spread: float = 0.3,
    alpha_mean: float = 10.0,
    alpha_sd: float = 0.5,
    pool_size: int = 127,
    border_samples: int = 5,
    seed: int = 0,
    runs: int = 100,
    m4_priority: PriorityMode = PriorityMode.LOCALS_FAVORED,
) -> GenConfig:
    """A 23-ward city on a square grid with two corners removed.

    Wards get lognormal shares of the city's daycare users (times ``scale``),
    facilities in proportion to users, and seats per age following the
    reference ward's age profile times a ward-level supply shock. Border
    fractions are the share of jittered sample points in each subdivision
    whose nearest facility lies in another ward.
    """
    rng = np.random.default_rng(layout_seed)
    cells = [(r, c) for r in range(grid) for c in range(grid)]
    cells = [rc for rc in cells if rc not in ((0, 0), (grid - 1, grid - 1))][:CITY_WARDS]
    lat0, lon0 = 35.60, 139.65
    dlat = ward_km / 111.0
    dlon = ward_km / (111.0 * math.cos(math.radians(lat0)))
    n_wards = len(cells)
    share = rng.lognormal(0.0, 0.45, n_wards)
    share /= share.sum()
    users_total = CITY_USERS * scale
    ward_users = {w: int(round(users_total * share[w])) for w in range(n_wards)}
    n_fac_total = max(n_wards, int(round(CITY_FACILITIES * scale)))

    subdivisions: list[Subdivision] = []
    k = subdivisions_per_side
    for w, (r, c) in enumerate(cells):
        for a in range(k):
            for b in range(k):
                subdivisions.append(Subdivision(
                    len(subdivisions), w,
                    lat0 + (r + (a + 0.5) / k) * dlat, lon0 + (c + (b + 0.5) / k) * dlon,
                    float(rng.lognormal(0.0, 0.5)),
                ))

    seat_profile = np.array(REFERENCE_SEATS, dtype=float) / np.array(REFERENCE_APPLICANTS, dtype=float)
    seat_profile = seat_profile / seat_profile.mean()
    facilities: list[Facility] = []
    for w, (r, c) in enumerate(cells):
        n_fac = max(1, int(round(n_fac_total * share[w])))
        supply = capacity_ratio * float(np.exp(rng.normal(0.0, capacity_spread)))
        seats = [
            scale_applicants(ward_users[w], REFERENCE_KAPPA[a]) * supply * min(seat_profile[a], 1.5)
            * float(np.exp(rng.normal(0.0, age_spread)))
            for a in AGES
        ]
        # split each age's seats across the ward's facilities by random weights
        weights = rng.dirichlet(np.full(n_fac, 2.0))
        caps = np.array([np.floor(weights * s + rng.random(n_fac)) for s in seats], dtype=np.int64).T
        for j in range(n_fac):
            facilities.append(Facility(
                len(facilities), w,
                lat0 + (r + rng.random()) * dlat, lon0 + (c + rng.random()) * dlon,
                tuple(int(v) for v in caps[j]),
            ))

    # border fractions from jittered sample points
    flat = np.array([f.lat for f in facilities])
    flon = np.array([f.lon for f in facilities])
    freg = np.array([f.region for f in facilities])
    with_border = []
    for s in subdivisions:
        g = border_samples
        offs = (np.arange(g) + 0.5) / g - 0.5
        plat = s.lat + (offs[:, None] + rng.uniform(-0.5, 0.5, (g, g)) / g) * dlat / k
        plon = s.lon + (offs[None, :] + rng.uniform(-0.5, 0.5, (g, g)) / g) * dlon / k
        d = haversine_km(plat.ravel()[:, None], plon.ravel()[:, None], flat[None, :], flon[None, :])
        nearest = freg[d.argmin(axis=1)]
        frac = float((nearest != s.region).mean())
        with_border.append(Subdivision(s.id, s.region, s.lat, s.lon, s.population, frac))

    pool = tuple(float(v) for v in rng.normal(alpha_mean, alpha_sd, pool_size))
    return GenConfig(
        subdivisions=tuple(with_border),
        facilities=tuple(facilities),
        ward_users=ward_users,
        alpha_pool=pool,
        seed=seed,
        runs=runs,
        m4_priority=m4_priority,
        meta={"layout": "grid", "scale": scale, "layout_seed": layout_seed},
    )
