"""Brute-force ground truth on small markets.

Everything here is deliberately naive and self-contained: plain Python loops
over dense priority tables, no reuse of the mechanism or checker code it is
used to verify.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from .errors import BoundExceeded
from .market import (
    UNACCEPTABLE,
    UNMATCHED,
    AgeSchool,
    ExplicitPriorities,
    Matching,
    MarketInstance,
    PriorityProfile,
    RegionScheme,
    Student,
    flow_report,
    is_fair,
    is_individually_rational,
)
from .mechanisms import deferred_acceptance, fig_cycles_algorithm, regionwise_sosm


@dataclass(frozen=True)
class SmallMarketBound:
    max_students: int = 8
    max_schools: int = 5
    max_regions: int = 3


BOUND = SmallMarketBound()


class _Tables:
    def __init__(self, market: MarketInstance, priorities: PriorityProfile | None, bound: SmallMarketBound):
        if market.n_students > bound.max_students or market.n_schools > bound.max_schools:
            raise BoundExceeded(
                f"{market.n_students} students / {market.n_schools} schools exceeds "
                f"{bound.max_students} / {bound.max_schools}"
            )
        pri = priorities if priorities is not None else market.priorities
        n, m = market.n_students, market.n_schools
        self.n, self.m = n, m
        self.cap = [sch.capacity for sch in market.schools]
        self.prefs = [list(st.preferences) for st in market.students]
        # rank[i][s]: position in i's list, or len(list) for unlisted schools and the outside option
        self.rank = []
        for i in range(n):
            r = [len(self.prefs[i])] * m
            for k, s in enumerate(self.prefs[i]):
                r[s] = k
            self.rank.append(r)
        self.key = [
            [int(pri.keys(np.array([s]), np.array([i]))[0]) for i in range(n)] for s in range(m)
        ]
        self.age_ok = [
            [market.students[i].age == market.schools[s].age for i in range(n)] for s in range(m)
        ]

    def acceptable(self, s: int, i: int) -> bool:
        return self.key[s][i] < UNACCEPTABLE and self.age_ok[s][i]

    def outcome_rank(self, i: int, s: int) -> int:
        return len(self.prefs[i]) if s == UNMATCHED else self.rank[i][s]


def _enumerate(t: _Tables) -> Iterator[tuple[int, ...]]:
    assign = [UNMATCHED] * t.n
    load = [0] * t.m

    def rec(i: int) -> Iterator[tuple[int, ...]]:
        if i == t.n:
            yield tuple(assign)
            return
        assign[i] = UNMATCHED
        yield from rec(i + 1)
        for s in t.prefs[i]:
            if load[s] < t.cap[s] and t.acceptable(s, i):
                load[s] += 1
                assign[i] = s
                yield from rec(i + 1)
                load[s] -= 1
        assign[i] = UNMATCHED

    yield from rec(0)


def _fair(t: _Tables, a: tuple[int, ...]) -> bool:
    for i in range(t.n):
        ri = t.outcome_rank(i, a[i])
        for j in range(t.n):
            s = a[j]
            if j == i or s == UNMATCHED:
                continue
            if t.rank[i][s] < ri and t.acceptable(s, i) and t.key[s][i] < t.key[s][j]:
                return False
    return True


def _non_wasteful(t: _Tables, a: tuple[int, ...]) -> bool:
    load = [0] * t.m
    for s in a:
        if s != UNMATCHED:
            load[s] += 1
    for i in range(t.n):
        ri = t.outcome_rank(i, a[i])
        for s in t.prefs[i][:ri]:
            if load[s] < t.cap[s] and t.acceptable(s, i):
                return False
    return True


def _balanced(a: tuple[int, ...], stu_region: list[int], sch_region: list[int], n_regions: int) -> bool:
    inflow = [0] * n_regions
    outflow = [0] * n_regions
    for i, s in enumerate(a):
        if s == UNMATCHED:
            continue
        if stu_region[i] != sch_region[s]:
            inflow[sch_region[s]] += 1
            outflow[stu_region[i]] += 1
    return inflow == outflow


def _to_matching(a: tuple[int, ...], m: int) -> Matching:
    return Matching.from_assignment(list(a), m)


def _ranks(t: _Tables, a: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(t.outcome_rank(i, s) for i, s in enumerate(a))


def _undominated(t: _Tables, cands: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    if not cands:
        return []
    R = np.array([_ranks(t, a) for a in cands], dtype=np.int64)
    keep = []
    for k in range(len(cands)):
        weak = np.all(R <= R[k], axis=1)
        strict = np.any(R < R[k], axis=1)
        if not np.any(weak & strict):
            keep.append(cands[k])
    return keep


def enumerate_feasible(
    market: MarketInstance, priorities: PriorityProfile | None = None, bound: SmallMarketBound = BOUND
) -> list[Matching]:
    """Every matching respecting capacity, age and acceptability on both sides."""
    t = _Tables(market, priorities, bound)
    return [_to_matching(a, t.m) for a in _enumerate(t)]


def ibf_set(
    market: MarketInstance,
    scheme: RegionScheme,
    priorities: PriorityProfile | None = None,
    bound: SmallMarketBound = BOUND,
) -> list[Matching]:
    t = _Tables(market, priorities, bound)
    if scheme.n_regions > bound.max_regions and scheme.n_regions > 1:
        raise BoundExceeded(f"{scheme.n_regions} regions exceeds {bound.max_regions}")
    sr, cr = scheme.student_region.tolist(), scheme.school_region.tolist()
    out = [a for a in _enumerate(t) if _balanced(a, sr, cr, scheme.n_regions) and _fair(t, a)]
    return [_to_matching(a, t.m) for a in out]


def efficient_ibf_set(
    market: MarketInstance,
    scheme: RegionScheme,
    priorities: PriorityProfile | None = None,
    bound: SmallMarketBound = BOUND,
) -> list[Matching]:
    """iBFs not Pareto dominated by any other iBF."""
    t = _Tables(market, priorities, bound)
    if scheme.n_regions > bound.max_regions:
        raise BoundExceeded(f"{scheme.n_regions} regions exceeds {bound.max_regions}")
    sr, cr = scheme.student_region.tolist(), scheme.school_region.tolist()
    ibfs = [a for a in _enumerate(t) if _balanced(a, sr, cr, scheme.n_regions) and _fair(t, a)]
    return [_to_matching(a, t.m) for a in _undominated(t, ibfs)]


def stable_set(
    market: MarketInstance, priorities: PriorityProfile | None = None, bound: SmallMarketBound = BOUND
) -> list[Matching]:
    """All individually rational, fair and non-wasteful matchings."""
    t = _Tables(market, priorities, bound)
    return [_to_matching(a, t.m) for a in _enumerate(t) if _fair(t, a) and _non_wasteful(t, a)]


def student_optimal(
    market: MarketInstance, matchings: list[Matching], priorities: PriorityProfile | None = None,
    bound: SmallMarketBound = BOUND,
) -> Matching | None:
    """The member weakly preferred by every student to every other member, if one exists."""
    t = _Tables(market, priorities, bound)
    rows = [_ranks(t, tuple(int(s) for s in mu.assign)) for mu in matchings]
    for k, r in enumerate(rows):
        if all(all(a <= b for a, b in zip(r, other)) for other in rows):
            return matchings[k]
    return None


def has_fig_cycle_brute(
    matching: Matching,
    market: MarketInstance,
    scheme: RegionScheme,
    priorities: PriorityProfile | None = None,
) -> bool:
    """Cycle existence in the FIG built edge by edge from its definition."""
    t = _Tables(market, priorities, SmallMarketBound(64, 64, 64))
    a = [int(s) for s in matching.assign]
    load = [0] * t.m
    for s in a:
        if s != UNMATCHED:
            load[s] += 1
    sr, cr = scheme.student_region.tolist(), scheme.school_region.tolist()
    adj: dict[tuple[str, int], list[tuple[str, int]]] = {}
    for s in range(t.m):
        envious = [i for i in range(t.n) if t.rank[i][s] < t.outcome_rank(i, a[i]) and s in t.prefs[i]]
        if envious:
            top = min(envious, key=lambda i: t.key[s][i])
            if t.acceptable(s, top):
                adj.setdefault(("i", top), []).append(("s", s))
        for i in range(t.n):
            if a[i] == s:
                adj.setdefault(("s", s), []).append(("i", i))
            elif load[s] < t.cap[s] and (
                (a[i] == UNMATCHED and sr[i] == cr[s]) or (a[i] != UNMATCHED and cr[a[i]] == cr[s])
            ):
                adj.setdefault(("s", s), []).append(("i", i))
    color: dict[tuple[str, int], int] = {}

    def dfs(v: tuple[str, int]) -> bool:
        color[v] = 1
        for w in adj.get(v, []):
            c = color.get(w, 0)
            if c == 1 or (c == 0 and dfs(w)):
                return True
        color[v] = 2
        return False

    return any(color.get(v, 0) == 0 and dfs(v) for v in list(adj))


def random_market(
    rng: np.random.Generator,
    max_students: int = 6,
    max_schools: int = 4,
    regions: tuple[int, int] = (2, 3),
    ages: int = 2,
    locals_first: bool = True,
) -> MarketInstance:
    """Random small market: uniform preferences over random-length lists,
    uniform priorities (locals first when requested), capacities in {0, 1, 2}."""
    n = int(rng.integers(1, max_students + 1))
    m = int(rng.integers(1, max_schools + 1))
    n_regions = int(rng.integers(regions[0], regions[1] + 1))
    sch_age = rng.integers(0, ages, size=m)
    sch_region = rng.integers(0, n_regions, size=m)
    schools = [
        AgeSchool(id=s, facility=s, age=int(sch_age[s]), region=int(sch_region[s]),
                  capacity=int(rng.integers(0, 3)))
        for s in range(m)
    ]
    students = []
    for i in range(n):
        age = int(rng.integers(0, ages))
        same = [s for s in range(m) if sch_age[s] == age]
        k = int(rng.integers(0, len(same) + 1))
        prefs = tuple(int(s) for s in rng.permutation(same)[:k]) if same else ()
        students.append(Student(id=i, age=age, home_region=int(rng.integers(0, n_regions)),
                                preferences=prefs, tiebreak_rank=i + 1))
    orders = []
    for s in range(m):
        eligible = [i for i in range(n) if students[i].age == sch_age[s]]
        perm = [eligible[k] for k in rng.permutation(len(eligible))]
        if locals_first:
            perm = [i for i in perm if students[i].home_region == sch_region[s]] + [
                i for i in perm if students[i].home_region != sch_region[s]
            ]
        orders.append(perm)
    return MarketInstance(students, schools, ExplicitPriorities(orders, n))


@dataclass(frozen=True)
class CorpusReport:
    count: int
    failures: tuple[tuple[int, tuple[str, ...]], ...]

    @property
    def passed(self) -> int:
        return self.count - len(self.failures)


def check_market(market: MarketInstance) -> tuple[str, ...]:
    """Problems with the FIG cycles outcome (from region-wise SOSM) and with DA on one small market."""
    scheme = RegionScheme.cross_age(market)
    pri = market.priorities
    start = regionwise_sosm(market, scheme, pri)
    out, _ = fig_cycles_algorithm(start, market, scheme, pri)
    problems = []
    if not is_individually_rational(out, market, pri):
        problems.append("not individually rational")
    if not is_fair(out, market, pri):
        problems.append("not fair")
    if not flow_report(out, scheme).balanced:
        problems.append("not balanced")
    if has_fig_cycle_brute(out, market, scheme, pri):
        problems.append("FIG cycle remains")
    if out not in efficient_ibf_set(market, scheme, pri):
        problems.append("not an efficient iBF")
    da = deferred_acceptance([s.preferences for s in market.students], pri, market.capacity)
    if da != student_optimal(market, stable_set(market, pri), pri):
        problems.append("DA differs from the student-optimal stable matching")
    return tuple(problems)


def check_corpus(seed: int, count: int = 1000) -> CorpusReport:
    """Run :func:`check_market` on ``count`` random markets drawn from one seeded stream."""
    rng = np.random.default_rng(seed)
    failures = []
    for k in range(count):
        problems = check_market(random_market(rng))
        if problems:
            failures.append((k, problems))
    return CorpusReport(count, tuple(failures))
