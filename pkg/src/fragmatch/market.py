"""Core market types: students, age-schools, regions, priorities and matchings.

Identifiers are dense zero-based integers. A facility offering seats to several
ages is split into one ``AgeSchool`` per age; a student of age ``a`` can only
be matched to an age-``a`` school.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InputError

UNMATCHED = -1
AGES = tuple(range(6))

# Priority keys at or above this value mean "unacceptable to the school".
UNACCEPTABLE = 1 << 40


@dataclass(frozen=True)
class Student:
    id: int
    age: int
    home_region: int
    preferences: tuple[int, ...] = ()
    score: float = 0.0
    tiebreak_rank: int = 1
    lat: float = math.nan
    lon: float = math.nan
    subdivision: int = -1


@dataclass(frozen=True)
class AgeSchool:
    id: int
    facility: int
    age: int
    region: int
    capacity: int
    lat: float = math.nan
    lon: float = math.nan
    benchmark_cutoff: float | None = None
    alpha: float | None = None


@dataclass(frozen=True)
class Violation:
    rule: str
    entity: str
    detail: str = ""

    def as_dict(self) -> dict[str, str]:
        return {"rule": self.rule, "entity": self.entity, "detail": self.detail}


class MarketInstance:
    """Static description of a market: students, age-schools and their regions.

    ``priorities`` defaults to the locals-favored profile built from each
    student's (score desc, tiebreak_rank asc) over the municipal regions.
    """

    def __init__(
        self,
        students: Sequence[Student],
        schools: Sequence[AgeSchool],
        priorities: PriorityProfile | None = None,
    ):
        self.students = tuple(students)
        self.schools = tuple(schools)
        self._priorities = priorities

    @property
    def n_students(self) -> int:
        return len(self.students)

    @property
    def n_schools(self) -> int:
        return len(self.schools)

    @cached_property
    def student_age(self) -> np.ndarray:
        return np.array([s.age for s in self.students], dtype=np.int64)

    @cached_property
    def student_region(self) -> np.ndarray:
        return np.array([s.home_region for s in self.students], dtype=np.int64)

    @cached_property
    def school_age(self) -> np.ndarray:
        return np.array([s.age for s in self.schools], dtype=np.int64)

    @cached_property
    def school_region(self) -> np.ndarray:
        return np.array([s.region for s in self.schools], dtype=np.int64)

    @cached_property
    def school_facility(self) -> np.ndarray:
        return np.array([s.facility for s in self.schools], dtype=np.int64)

    @cached_property
    def capacity(self) -> np.ndarray:
        return np.array([s.capacity for s in self.schools], dtype=np.int64)

    @cached_property
    def rank_of(self) -> list[dict[int, int]]:
        """Per student, school id -> 0-based position in her preference list."""
        return [{s: k for k, s in enumerate(st.preferences)} for st in self.students]

    @cached_property
    def priorities(self) -> PriorityProfile:
        if self._priorities is not None:
            return self._priorities
        return MasterPriorities.from_market(self, master_rank_from_scores(self.students))

    def with_priorities(self, priorities: PriorityProfile) -> MarketInstance:
        return MarketInstance(self.students, self.schools, priorities)

    def with_preferences(self, prefs: Sequence[Sequence[int]]) -> MarketInstance:
        students = [
            Student(
                id=st.id, age=st.age, home_region=st.home_region, preferences=tuple(p),
                score=st.score, tiebreak_rank=st.tiebreak_rank, lat=st.lat, lon=st.lon,
                subdivision=st.subdivision,
            )
            for st, p in zip(self.students, prefs)
        ]
        return MarketInstance(students, self.schools, self._priorities)

    def rol_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened preference lists as parallel (student, school, position) arrays."""
        return self._rol_entries

    @cached_property
    def _rol_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lengths = np.array([len(st.preferences) for st in self.students], dtype=np.int64)
        total = int(lengths.sum())
        stu = np.repeat(np.arange(self.n_students, dtype=np.int64), lengths)
        sch = np.fromiter(
            (s for st in self.students for s in st.preferences), dtype=np.int64, count=total
        )
        starts = np.cumsum(lengths) - lengths
        pos = np.arange(total, dtype=np.int64) - np.repeat(starts, lengths)
        return stu, sch, pos

    @cached_property
    def rol_length(self) -> np.ndarray:
        return np.array([len(st.preferences) for st in self.students], dtype=np.int64)


# ---------------------------------------------------------------------------
# Priorities


def master_rank_from_scores(students: Sequence[Student]) -> np.ndarray:
    """Rank (0 = highest priority) by score descending, then tiebreak_rank ascending."""
    order = sorted(
        range(len(students)),
        key=lambda i: (-students[i].score, students[i].tiebreak_rank, students[i].age, i),
    )
    rank = np.empty(len(students), dtype=np.int64)
    rank[np.array(order, dtype=np.int64)] = np.arange(len(students), dtype=np.int64)
    return rank


class PriorityProfile:
    """Strict priority of each school over students, lower key = higher priority.

    Keys at or above ``UNACCEPTABLE`` mark students the school finds unacceptable.
    """

    master_rank: np.ndarray | None = None

    def keys(self, schools: np.ndarray, students: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def key(self, school: int, student: int) -> int:
        return int(self.keys(np.array([school]), np.array([student]))[0])

    def acceptable(self, school: int, student: int) -> bool:
        return self.key(school, student) < UNACCEPTABLE

    def prefers(self, school: int, i: int, j: int) -> bool:
        """True iff ``i`` has strictly higher priority than ``j`` at ``school``, ``i`` acceptable."""
        ki, kj = self.key(school, i), self.key(school, j)
        return ki < UNACCEPTABLE and ki < kj


class MasterPriorities(PriorityProfile):
    """One master ranking, optionally reordered so each school ranks its region's residents first.

    Students of a different age than the school are unacceptable to it.
    """

    def __init__(
        self,
        master_rank: np.ndarray,
        student_region: np.ndarray,
        school_region: np.ndarray,
        student_age: np.ndarray,
        school_age: np.ndarray,
        locals_favored: bool = True,
    ):
        self.master_rank = np.asarray(master_rank, dtype=np.int64)
        self.student_region = np.asarray(student_region, dtype=np.int64)
        self.school_region = np.asarray(school_region, dtype=np.int64)
        self.student_age = np.asarray(student_age, dtype=np.int64)
        self.school_age = np.asarray(school_age, dtype=np.int64)
        self.locals_favored = locals_favored
        self._n = len(self.master_rank)

    @classmethod
    def from_market(
        cls, market: MarketInstance, master_rank: np.ndarray, locals_favored: bool = True
    ) -> MasterPriorities:
        return cls(
            master_rank, market.student_region, market.school_region,
            market.student_age, market.school_age, locals_favored,
        )

    def keys(self, schools: np.ndarray, students: np.ndarray) -> np.ndarray:
        schools = np.asarray(schools, dtype=np.int64)
        students = np.asarray(students, dtype=np.int64)
        k = self.master_rank[students].copy()
        if self.locals_favored:
            k += self._n * (self.student_region[students] != self.school_region[schools])
        k += UNACCEPTABLE * (self.student_age[students] != self.school_age[schools])
        return k

    def key(self, school: int, student: int) -> int:
        k = int(self.master_rank[student])
        if self.locals_favored and self.student_region[student] != self.school_region[school]:
            k += self._n
        if self.student_age[student] != self.school_age[school]:
            k += UNACCEPTABLE
        return k


class ExplicitPriorities(PriorityProfile):
    """Per-school explicit order over acceptable students; unlisted students are unacceptable."""

    def __init__(self, orders: Sequence[Sequence[int]], n_students: int):
        self.orders = [tuple(o) for o in orders]
        self._rank = np.full((len(orders), n_students), UNACCEPTABLE, dtype=np.int64)
        for s, order in enumerate(self.orders):
            if len(set(order)) != len(order):
                raise InputError(f"school {s}: priority order has duplicate students")
            for k, i in enumerate(order):
                self._rank[s, i] = k

    def keys(self, schools: np.ndarray, students: np.ndarray) -> np.ndarray:
        return self._rank[np.asarray(schools, dtype=np.int64), np.asarray(students, dtype=np.int64)]

    def key(self, school: int, student: int) -> int:
        return int(self._rank[school, student])


def locals_favored(priorities: PriorityProfile, market: MarketInstance, scheme: RegionScheme) -> bool:
    """Every school ranks each acceptable same-region student above each acceptable outsider."""
    n = market.n_students
    for s in range(market.n_schools):
        r = scheme.school_region[s]
        local = scheme.student_region == r
        if local.all() or not local.any():
            continue
        k = priorities.keys(np.full(n, s), np.arange(n))
        ok = k < UNACCEPTABLE
        if (local & ok).any() and (~local & ok).any() and k[local & ok].max() >= k[~local & ok].min():
            return False
    return True


# ---------------------------------------------------------------------------
# Regions


class RegionMode(str, enum.Enum):
    CROSS_AGE = "cross"
    AGE_SPECIFIC = "age"
    SINGLE = "single"


@dataclass(frozen=True, eq=False)
class RegionScheme:
    mode: RegionMode
    student_region: np.ndarray
    school_region: np.ndarray
    n_regions: int

    @classmethod
    def cross_age(cls, market: MarketInstance) -> RegionScheme:
        return cls._dense(RegionMode.CROSS_AGE, market.student_region, market.school_region)

    @classmethod
    def age_specific(cls, market: MarketInstance) -> RegionScheme:
        return cls._dense(
            RegionMode.AGE_SPECIFIC,
            market.student_region * len(AGES) + market.student_age,
            market.school_region * len(AGES) + market.school_age,
        )

    @classmethod
    def single(cls, market: MarketInstance) -> RegionScheme:
        return cls(
            RegionMode.SINGLE,
            np.zeros(market.n_students, dtype=np.int64),
            np.zeros(market.n_schools, dtype=np.int64),
            1,
        )

    @classmethod
    def for_mode(cls, market: MarketInstance, mode: RegionMode | str) -> RegionScheme:
        mode = RegionMode(mode)
        if mode is RegionMode.CROSS_AGE:
            return cls.cross_age(market)
        if mode is RegionMode.AGE_SPECIFIC:
            return cls.age_specific(market)
        return cls.single(market)

    @classmethod
    def _dense(cls, mode: RegionMode, stu: np.ndarray, sch: np.ndarray) -> RegionScheme:
        labels, inv = np.unique(np.concatenate([stu, sch]), return_inverse=True)
        inv = inv.astype(np.int64)
        return cls(mode, inv[: len(stu)], inv[len(stu):], len(labels))

    def violations(self) -> list[Violation]:
        """The partition conditions: every region id in use is nonempty, ids are in range."""
        out = []
        used = np.zeros(self.n_regions, dtype=bool)
        for name, arr in (("student", self.student_region), ("school", self.school_region)):
            bad = (arr < 0) | (arr >= self.n_regions)
            for idx in np.flatnonzero(bad):
                out.append(Violation("RegionOutOfRange", f"{name} {idx}", f"region {arr[idx]}"))
            used[arr[~bad]] = True
        for r in np.flatnonzero(~used):
            out.append(Violation("EmptyRegion", f"region {r}"))
        return out


# ---------------------------------------------------------------------------
# Matching


class Matching:
    """Assignment of students to schools, stored in both directions.

    ``assign[i]`` is a school id or ``UNMATCHED``; ``rosters[s]`` is the set of
    students at ``s``. Mutators keep both sides consistent; constructing from
    raw parts does not, so checkers can detect inconsistency.
    """

    __slots__ = ("assign", "rosters")

    def __init__(self, assign: Sequence[int] | np.ndarray, rosters: Sequence[Iterable[int]]):
        self.assign = np.array(assign, dtype=np.int64)
        self.rosters = [set(r) for r in rosters]

    @classmethod
    def empty(cls, n_students: int, n_schools: int) -> Matching:
        return cls(np.full(n_students, UNMATCHED, dtype=np.int64), [set() for _ in range(n_schools)])

    @classmethod
    def from_assignment(cls, assign: Sequence[int] | np.ndarray, n_schools: int) -> Matching:
        assign = np.asarray(assign, dtype=np.int64)
        rosters: list[set[int]] = [set() for _ in range(n_schools)]
        for i, s in enumerate(assign.tolist()):
            if s != UNMATCHED:
                if not 0 <= s < n_schools:
                    raise InputError(f"student {i} assigned to unknown school {s}")
                rosters[s].add(i)
        return cls(assign, rosters)

    @classmethod
    def from_pairs(cls, pairs: dict[int, int], n_students: int, n_schools: int) -> Matching:
        assign = np.full(n_students, UNMATCHED, dtype=np.int64)
        for i, s in pairs.items():
            assign[i] = s
        return cls.from_assignment(assign, n_schools)

    @property
    def n_students(self) -> int:
        return len(self.assign)

    @property
    def n_schools(self) -> int:
        return len(self.rosters)

    def copy(self) -> Matching:
        return Matching(self.assign.copy(), self.rosters)

    def match(self, i: int, s: int) -> None:
        old = int(self.assign[i])
        if old != UNMATCHED:
            self.rosters[old].discard(i)
        self.assign[i] = s
        if s != UNMATCHED:
            self.rosters[s].add(i)

    def unmatch(self, i: int) -> None:
        self.match(i, UNMATCHED)

    def pairs(self) -> dict[int, int]:
        return {i: int(s) for i, s in enumerate(self.assign) if s != UNMATCHED}

    def key(self) -> tuple[int, ...]:
        return tuple(int(s) for s in self.assign)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matching):
            return NotImplemented
        return np.array_equal(self.assign, other.assign) and self.rosters == other.rosters

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"Matching({self.pairs()})"


@dataclass
class FlowReport:
    inflow: np.ndarray
    outflow: np.ndarray
    balanced: bool = field(init=False)

    def __post_init__(self) -> None:
        self.balanced = bool(np.array_equal(self.inflow, self.outflow))


# ---------------------------------------------------------------------------
# Checkers


def validate_market(market: MarketInstance) -> list[Violation]:
    """All type-level invariant violations of a market; empty iff well formed."""
    out: list[Violation] = []
    m = market.n_schools
    for k, sch in enumerate(market.schools):
        if sch.id != k:
            out.append(Violation("NonDenseId", f"school {k}", f"id {sch.id}"))
        if sch.capacity < 0:
            out.append(Violation("NegativeCapacity", f"school {k}", f"capacity {sch.capacity}"))
        if sch.age not in AGES:
            out.append(Violation("InvalidAge", f"school {k}", f"age {sch.age}"))
        if sch.benchmark_cutoff is not None and sch.benchmark_cutoff < 0:
            out.append(Violation("NegativeCutoff", f"school {k}", f"{sch.benchmark_cutoff}"))
    fac_region: dict[int, int] = {}
    fac_age: set[tuple[int, int]] = set()
    for sch in market.schools:
        prev = fac_region.setdefault(sch.facility, sch.region)
        if prev != sch.region:
            out.append(Violation(
                "RegionInconsistent", f"school {sch.id}",
                f"facility {sch.facility} in regions {prev} and {sch.region}",
            ))
        if (sch.facility, sch.age) in fac_age:
            out.append(Violation("DuplicateAgeSchool", f"school {sch.id}",
                                 f"facility {sch.facility} age {sch.age}"))
        fac_age.add((sch.facility, sch.age))
    seen_tiebreak: dict[tuple[int, int], int] = {}
    for k, st in enumerate(market.students):
        ent = f"student {k}"
        if st.id != k:
            out.append(Violation("NonDenseId", ent, f"id {st.id}"))
        if st.age not in AGES:
            out.append(Violation("InvalidAge", ent, f"age {st.age}"))
        if not (st.score >= 0):
            out.append(Violation("NegativeScore", ent, f"score {st.score}"))
        if st.tiebreak_rank < 1:
            out.append(Violation("NonPositiveTiebreak", ent, f"tiebreak {st.tiebreak_rank}"))
        key = (st.age, st.tiebreak_rank)
        if key in seen_tiebreak:
            out.append(Violation("TiebreakCollision", ent,
                                 f"tiebreak {st.tiebreak_rank} shared with student {seen_tiebreak[key]}"))
        else:
            seen_tiebreak[key] = k
        if len(set(st.preferences)) != len(st.preferences):
            out.append(Violation("DuplicatePreference", ent))
        for s in st.preferences:
            if not 0 <= s < m:
                out.append(Violation("UnknownSchool", ent, f"school {s}"))
            elif market.schools[s].age != st.age:
                out.append(Violation("AgeMismatch", ent,
                                     f"age {st.age} lists school {s} of age {market.schools[s].age}"))
    return out


def _check_ids(matching: Matching, market: MarketInstance) -> None:
    if matching.n_students != market.n_students:
        raise InputError(f"matching has {matching.n_students} students, market has {market.n_students}")
    if matching.n_schools != market.n_schools:
        raise InputError(f"matching has {matching.n_schools} schools, market has {market.n_schools}")
    bad = (matching.assign != UNMATCHED) & ((matching.assign < 0) | (matching.assign >= market.n_schools))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InputError(f"student {i} assigned to unknown school {matching.assign[i]}")
    for s, roster in enumerate(matching.rosters):
        for i in roster:
            if not 0 <= i < market.n_students:
                raise InputError(f"school {s} roster holds unknown student {i}")


def check_feasible(matching: Matching, market: MarketInstance) -> list[Violation]:
    """Capacity, two-sided consistency and age compatibility."""
    _check_ids(matching, market)
    out: list[Violation] = []
    for s, roster in enumerate(matching.rosters):
        if len(roster) > market.schools[s].capacity:
            out.append(Violation("CapacityExceeded", f"school {s}",
                                 f"{len(roster)} > {market.schools[s].capacity}"))
        for i in sorted(roster):
            if matching.assign[i] != s:
                out.append(Violation("InconsistentRoster", f"school {s}",
                                     f"roster holds {i} but assign[{i}]={matching.assign[i]}"))
    for i, s in enumerate(matching.assign.tolist()):
        if s == UNMATCHED:
            continue
        if i not in matching.rosters[s]:
            out.append(Violation("InconsistentRoster", f"student {i}",
                                 f"assign[{i}]={s} but roster({s}) lacks {i}"))
        if market.schools[s].age != market.students[i].age:
            out.append(Violation("AgeMismatch", f"student {i}", f"matched to school {s}"))
    return out


def is_individually_rational(
    matching: Matching, market: MarketInstance, priorities: PriorityProfile | None = None
) -> bool:
    pri = priorities if priorities is not None else market.priorities
    rank_of = market.rank_of
    for i, s in enumerate(matching.assign.tolist()):
        if s == UNMATCHED:
            continue
        if s not in rank_of[i] or not pri.acceptable(s, i):
            return False
    return True


def outcome_ranks(matching: Matching, market: MarketInstance) -> np.ndarray:
    """0-based preference position of each student's outcome.

    Unmatched sits at the outside-option position ``len(preferences)``; a
    school absent from the list ranks one below that.
    """
    rank_of = market.rank_of
    out = np.empty(market.n_students, dtype=np.int64)
    for i, s in enumerate(matching.assign.tolist()):
        L = len(market.students[i].preferences)
        if s == UNMATCHED:
            out[i] = L
        else:
            out[i] = rank_of[i].get(s, L + 1)
    return out


def justified_envy_pairs(
    matching: Matching, market: MarketInstance, priorities: PriorityProfile | None = None
) -> list[tuple[int, int, int]]:
    """All (i, j, s) with mu_j = s, s preferred by i to mu_i, and i above j at s."""
    pri = priorities if priorities is not None else market.priorities
    ranks = outcome_ranks(matching, market)
    out: list[tuple[int, int, int]] = []
    for i, st in enumerate(market.students):
        for s in st.preferences[: ranks[i]]:
            roster = matching.rosters[s]
            if not roster:
                continue
            js = np.array(sorted(roster), dtype=np.int64)
            ki = pri.key(s, i)
            if ki >= UNACCEPTABLE:
                continue
            kj = pri.keys(np.full(len(js), s), js)
            for j in js[ki < kj].tolist():
                out.append((i, j, s))
    return out


def is_fair(matching: Matching, market: MarketInstance, priorities: PriorityProfile | None = None) -> bool:
    pri = priorities if priorities is not None else market.priorities
    ranks = outcome_ranks(matching, market)
    for i, st in enumerate(market.students):
        for s in st.preferences[: ranks[i]]:
            roster = matching.rosters[s]
            if not roster:
                continue
            ki = pri.key(s, i)
            if ki >= UNACCEPTABLE:
                continue
            js = np.fromiter(roster, dtype=np.int64, count=len(roster))
            if (pri.keys(np.full(len(js), s), js) > ki).any():
                return False
    return True


def wasteful_pairs(
    matching: Matching, market: MarketInstance, priorities: PriorityProfile | None = None
) -> list[tuple[int, int]]:
    """(i, s) where s has a vacant seat, i is acceptable to s and prefers s to her outcome."""
    pri = priorities if priorities is not None else market.priorities
    ranks = outcome_ranks(matching, market)
    out = []
    for i, st in enumerate(market.students):
        for s in st.preferences[: ranks[i]]:
            if len(matching.rosters[s]) < market.schools[s].capacity and pri.acceptable(s, i):
                out.append((i, s))
    return out


def flow_report(matching: Matching, scheme: RegionScheme) -> FlowReport:
    matched = np.flatnonzero(matching.assign != UNMATCHED)
    home = scheme.student_region[matched]
    dest = scheme.school_region[matching.assign[matched]]
    cross = home != dest
    inflow = np.bincount(dest[cross], minlength=scheme.n_regions)
    outflow = np.bincount(home[cross], minlength=scheme.n_regions)
    return FlowReport(inflow.astype(np.int64), outflow.astype(np.int64))


def is_balanced(matching: Matching, scheme: RegionScheme) -> tuple[FlowReport, bool]:
    report = flow_report(matching, scheme)
    return report, report.balanced


class ParetoRelation(str, enum.Enum):
    EQUAL = "Equal"
    FIRST_DOMINATES = "FirstDominates"
    SECOND_DOMINATES = "SecondDominates"
    FIRST_WEAKLY_DOMINATES = "FirstWeaklyDominates"
    SECOND_WEAKLY_DOMINATES = "SecondWeaklyDominates"
    INCOMPARABLE = "Incomparable"


def pareto_compare(mu1: Matching, mu2: Matching, market: MarketInstance) -> ParetoRelation:
    """Compare two matchings by every student's ordinal ranking of her outcome.

    Preferences are strict, so identical ranks for every student is reported
    as ``EQUAL`` and weak dominance with at least one strict gain as
    dominance. The weak members of ``ParetoRelation`` exist for callers that
    compare by a coarser criterion than ordinal rank.
    """
    r1 = outcome_ranks(mu1, market)
    r2 = outcome_ranks(mu2, market)
    better = bool((r1 < r2).any())
    worse = bool((r1 > r2).any())
    if better and worse:
        return ParetoRelation.INCOMPARABLE
    if better:
        return ParetoRelation.FIRST_DOMINATES
    if worse:
        return ParetoRelation.SECOND_DOMINATES
    return ParetoRelation.EQUAL


def weakly_dominates(mu1: Matching, mu2: Matching, market: MarketInstance) -> bool:
    """Every student finds her mu1 outcome at least as good as her mu2 outcome."""
    return bool(np.all(outcome_ranks(mu1, market) <= outcome_ranks(mu2, market)))
