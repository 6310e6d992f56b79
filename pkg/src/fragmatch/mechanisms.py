"""Assignment mechanisms: serial dictatorship, deferred acceptance and FIG cycles.

The FIG (fair improvement graph) of a matching has an edge i -> s when i is
the highest-priority student who prefers s to her current outcome (and is
acceptable to s), and an edge s -> i when i holds a seat at s, or when s has a
vacant seat and i currently "sits" in s's region: either matched to a school
of that region, or unmatched and living there. Executing a cycle moves every
student on it to the school she points to.
"""

from __future__ import annotations

import enum
import heapq
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import NonIbfInput
from .market import (
    UNACCEPTABLE,
    UNMATCHED,
    Matching,
    MarketInstance,
    PriorityProfile,
    RegionScheme,
    flow_report,
    is_fair,
    is_individually_rational,
    outcome_ranks,
)


class MechanismId(str, enum.Enum):
    M1_REGIONWISE_SD = "m1"
    M2_FIG_AGE_SPECIFIC = "m2"
    M3_FIG_CROSS_AGE = "m3"
    M4_FULL_DA = "m4"


def serial_dictatorship(
    order: Sequence[int],
    rols: Sequence[Sequence[int]],
    capacities: Sequence[int] | np.ndarray,
) -> Matching:
    """Students in ``order`` each take their best listed school with a free seat."""
    remaining = np.array(capacities, dtype=np.int64)
    m = Matching.empty(len(rols), len(remaining))
    for i in order:
        for s in rols[i]:
            if remaining[s] > 0:
                remaining[s] -= 1
                m.match(i, s)
                break
    return m


def deferred_acceptance(
    rols: Sequence[Sequence[int]],
    priorities: PriorityProfile,
    capacities: Sequence[int] | np.ndarray,
    students: Sequence[int] | None = None,
) -> Matching:
    """Student-proposing deferred acceptance; returns the student-optimal stable matching.

    Only ``students`` (default: all) take part; the others stay unmatched.
    """
    caps = np.asarray(capacities, dtype=np.int64)
    n = len(rols)
    participants = range(n) if students is None else sorted(students)
    keys: dict[int, np.ndarray] = {}
    for i in participants:
        rol = np.asarray(rols[i], dtype=np.int64)
        keys[i] = priorities.keys(rol, np.full(len(rol), i)) if len(rol) else rol
    nxt = dict.fromkeys(participants, 0)
    held: list[list[tuple[int, int]]] = [[] for _ in range(len(caps))]
    free = deque(participants)
    while free:
        i = free.popleft()
        rol = rols[i]
        while nxt[i] < len(rol):
            k = nxt[i]
            nxt[i] += 1
            s = rol[k]
            key = int(keys[i][k])
            if key >= UNACCEPTABLE or caps[s] == 0:
                continue
            heap = held[s]
            if len(heap) < caps[s]:
                heapq.heappush(heap, (-key, i))
                break
            if key < -heap[0][0]:
                _, j = heapq.heapreplace(heap, (-key, i))
                free.append(j)
                break
    m = Matching.empty(n, len(caps))
    for s, heap in enumerate(held):
        for _, i in heap:
            m.match(i, s)
    return m


def restrict_to_region(market: MarketInstance, scheme: RegionScheme) -> list[tuple[int, ...]]:
    """Each student's preference list with out-of-region schools removed."""
    sr = scheme.school_region
    return [
        tuple(s for s in st.preferences if sr[s] == scheme.student_region[i])
        for i, st in enumerate(market.students)
    ]


def regionwise_sosm(
    market: MarketInstance, scheme: RegionScheme, priorities: PriorityProfile | None = None
) -> Matching:
    """Deferred acceptance run separately inside each region (students apply only at home)."""
    pri = priorities if priorities is not None else market.priorities
    return deferred_acceptance(restrict_to_region(market, scheme), pri, market.capacity)


# ---------------------------------------------------------------------------
# Fair improvement graph


@dataclass(frozen=True)
class FigCycle:
    students: tuple[int, ...]
    schools: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.students)

    def as_sequence(self) -> tuple[int, ...]:
        out: list[int] = []
        for i, s in zip(self.students, self.schools):
            out += [i, s]
        return tuple(out)


@dataclass
class FigGraph:
    """Fair improvement graph of one matching.

    ``student_out[i]`` lists (ascending) the schools i points to. Schools at
    capacity point to their roster; schools with a vacancy point to every
    student whose position region equals their region. ``position_region`` is
    the region of a student's school, or her home region when unmatched.
    """

    student_out: list[list[int]]
    top_envier: np.ndarray
    vacant: np.ndarray
    school_region: np.ndarray
    position_region: np.ndarray
    rosters: list[list[int]]

    @property
    def n_students(self) -> int:
        return len(self.student_out)

    @property
    def n_schools(self) -> int:
        return len(self.rosters)

    def school_out(self, s: int) -> list[int]:
        if self.vacant[s]:
            return np.flatnonzero(self.position_region == self.school_region[s]).tolist()
        return list(self.rosters[s])

    def edges(self) -> set[tuple[tuple[str, int], tuple[str, int]]]:
        out = set()
        for i, schools in enumerate(self.student_out):
            for s in schools:
                out.add((("i", i), ("s", s)))
        for s in range(self.n_schools):
            for i in self.school_out(s):
                out.add((("s", s), ("i", i)))
        return out


class _FigState:
    """Mutable state of the FIG cycles algorithm with precomputed preference entries.

    Preference entries acceptable to their school are sorted by (school,
    priority key) once, so the top envier of every school is the first entry
    of its block still below the student's current rank.
    """

    def __init__(self, matching: Matching, market: MarketInstance, scheme: RegionScheme,
                 priorities: PriorityProfile):
        self.market = market
        self.scheme = scheme
        stu, sch, pos = market.rol_entries()
        keys = priorities.keys(sch, stu) if len(stu) else np.zeros(0, dtype=np.int64)
        ok = keys < UNACCEPTABLE
        stu, sch, pos, keys = stu[ok], sch[ok], pos[ok], keys[ok]
        order = np.lexsort((keys, sch))
        self.e_stu, self.e_sch, self.e_pos = stu[order], sch[order], pos[order]
        self.matching = matching.copy()
        self.capacity = market.capacity
        self.cur_rank = outcome_ranks(self.matching, market)
        self.position_region = scheme.student_region.copy()
        matched = self.matching.assign != UNMATCHED
        self.position_region[matched] = scheme.school_region[self.matching.assign[matched]]

    def graph(self) -> FigGraph:
        n, m = self.market.n_students, self.market.n_schools
        mask = self.e_pos < self.cur_rank[self.e_stu]
        sel_sch = self.e_sch[mask]
        sel_stu = self.e_stu[mask]
        top = np.full(m, -1, dtype=np.int64)
        if len(sel_sch):
            first = np.flatnonzero(np.r_[True, sel_sch[1:] != sel_sch[:-1]])
            top[sel_sch[first]] = sel_stu[first]
        student_out: list[list[int]] = [[] for _ in range(n)]
        for s in np.flatnonzero(top >= 0).tolist():
            student_out[int(top[s])].append(s)
        sizes = np.fromiter((len(r) for r in self.matching.rosters), dtype=np.int64, count=m)
        return FigGraph(
            student_out=student_out,
            top_envier=top,
            vacant=sizes < self.capacity,
            school_region=self.scheme.school_region,
            position_region=self.position_region,
            rosters=[sorted(r) for r in self.matching.rosters],
        )

    def apply(self, cycle: FigCycle) -> None:
        _apply_in_place(self.matching, cycle, self.capacity)
        rank_of = self.market.rank_of
        for i, s in zip(cycle.students, cycle.schools):
            self.cur_rank[i] = rank_of[i][s]
            self.position_region[i] = self.scheme.school_region[s]


def build_fig(
    matching: Matching,
    market: MarketInstance,
    scheme: RegionScheme,
    priorities: PriorityProfile | None = None,
) -> FigGraph:
    pri = priorities if priorities is not None else market.priorities
    return _FigState(matching, market, scheme, pri).graph()


_WHITE, _GRAY, _BLACK = 0, 1, 2


class _SkipList:
    """Ascending member list of a region group with O(α) skipping of finished members."""

    __slots__ = ("members", "parent")

    def __init__(self, members: list[int]):
        self.members = members
        self.parent = list(range(len(members) + 1))

    def find(self, k: int) -> int:
        root = k
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[k] != root:
            parent[k], k = root, parent[k]
        return root

    def finish(self, k: int) -> None:
        self.parent[k] = k + 1


def find_fig_cycle(graph: FigGraph) -> FigCycle | None:
    """First cycle closed by a depth-first search over the FIG.

    Roots are tried in ascending student id and every adjacency list is
    scanned in ascending id order. Students without outgoing edges can never
    lie on a cycle, so they are pruned before the search; this does not change
    which cycle is closed first.
    """
    n, m = graph.n_students, graph.n_schools
    live = [i for i in range(n) if graph.student_out[i]]
    if not live:
        return None
    is_live = np.zeros(n, dtype=bool)
    is_live[live] = True

    groups: dict[int, _SkipList] = {}
    group_idx = {}
    by_region: dict[int, list[int]] = {}
    for i in live:
        by_region.setdefault(int(graph.position_region[i]), []).append(i)
    for r, members in by_region.items():
        groups[r] = _SkipList(members)
        for k, i in enumerate(members):
            group_idx[i] = (r, k)

    s_color = [_WHITE] * m
    i_color = [_WHITE] * n
    # stack entries: [kind, node, cursor]; kind 0 = student, 1 = full school, 2 = vacant school
    stack: list[list] = []
    where: dict[tuple[int, int], int] = {}

    def push_student(i: int) -> None:
        i_color[i] = _GRAY
        where[(0, i)] = len(stack)
        stack.append([0, i, 0])

    def push_school(s: int) -> None:
        s_color[s] = _GRAY
        where[(1, s)] = len(stack)
        if graph.vacant[s]:
            stack.append([2, s, 0])
        else:
            stack.append([1, s, [j for j in graph.rosters[s] if is_live[j]], 0])

    def close(kind: int, node: int) -> FigCycle:
        start = where[(kind, node)]
        path = [(e[0], e[1]) for e in stack[start:]]
        if kind == 1:
            path = path[1:] + path[:1]
        students = tuple(v for k, v in path if k == 0)
        schools = tuple(v for k, v in path if k != 0)
        return FigCycle(students, schools)

    def finish_top() -> None:
        e = stack.pop()
        if e[0] == 0:
            i = e[1]
            i_color[i] = _BLACK
            del where[(0, i)]
            r, k = group_idx[i]
            groups[r].finish(k)
        else:
            s_color[e[1]] = _BLACK
            del where[(1, e[1])]

    for root in live:
        if i_color[root] != _WHITE:
            continue
        push_student(root)
        while stack:
            e = stack[-1]
            kind = e[0]
            if kind == 0:
                outs = graph.student_out[e[1]]
                while e[2] < len(outs) and s_color[outs[e[2]]] == _BLACK:
                    e[2] += 1
                if e[2] == len(outs):
                    finish_top()
                    continue
                s = outs[e[2]]
                e[2] += 1
                if s_color[s] == _GRAY:
                    return close(1, s)
                push_school(s)
            elif kind == 1:
                members, cur = e[2], e[3]
                while cur < len(members) and i_color[members[cur]] == _BLACK:
                    cur += 1
                if cur == len(members):
                    finish_top()
                    continue
                e[3] = cur + 1
                j = members[cur]
                if i_color[j] == _GRAY:
                    return close(0, j)
                push_student(j)
            else:
                grp = groups.get(int(graph.school_region[e[1]]))
                if grp is None:
                    finish_top()
                    continue
                cur = grp.find(e[2])
                if cur >= len(grp.members):
                    finish_top()
                    continue
                e[2] = cur + 1
                j = grp.members[cur]
                if i_color[j] == _GRAY:
                    return close(0, j)
                push_student(j)
    return None


def _apply_in_place(matching: Matching, cycle: FigCycle, capacity: np.ndarray | None) -> None:
    for i in cycle.students:
        old = int(matching.assign[i])
        if old != UNMATCHED:
            matching.rosters[old].discard(i)
        matching.assign[i] = UNMATCHED
    for i, s in zip(cycle.students, cycle.schools):
        matching.assign[i] = s
        matching.rosters[s].add(i)
    if capacity is not None:
        for s in cycle.schools:
            assert len(matching.rosters[s]) <= capacity[s], f"cycle overfills school {s}"


def apply_cycle(matching: Matching, cycle: FigCycle, capacity: np.ndarray | None = None) -> Matching:
    """The matching generated by (matching, cycle): each i_k moves to s_k, others stay."""
    out = matching.copy()
    _apply_in_place(out, cycle, capacity)
    return out


def check_ibf(
    matching: Matching, market: MarketInstance, scheme: RegionScheme, priorities: PriorityProfile
) -> tuple[str, ...]:
    """Names of the iBF conditions (IR, fair, balanced) the matching fails."""
    failed = []
    if not is_individually_rational(matching, market, priorities):
        failed.append("individually_rational")
    if not is_fair(matching, market, priorities):
        failed.append("fair")
    if not flow_report(matching, scheme).balanced:
        failed.append("balanced")
    return tuple(failed)


def fig_cycles_algorithm(
    initial: Matching,
    market: MarketInstance,
    scheme: RegionScheme,
    priorities: PriorityProfile | None = None,
) -> tuple[Matching, list[FigCycle]]:
    """Execute FIG cycles from an iBF until none remains.

    Returns the final matching and the executed cycles in order.
    """
    pri = priorities if priorities is not None else market.priorities
    failed = check_ibf(initial, market, scheme, pri)
    if failed:
        raise NonIbfInput(f"initial matching is not an iBF: fails {', '.join(failed)}", failed=failed)
    state = _FigState(initial, market, scheme, pri)
    trace: list[FigCycle] = []
    bound = int(market.rol_length.sum())
    while True:
        cycle = find_fig_cycle(state.graph())
        if cycle is None:
            return state.matching, trace
        state.apply(cycle)
        trace.append(cycle)
        assert len(trace) <= bound, "FIG cycles exceeded the improvement bound"


def run_mechanism(
    mech: MechanismId | str,
    market: MarketInstance,
    priorities: PriorityProfile | None = None,
    m4_priorities: PriorityProfile | None = None,
) -> Matching:
    """One of the four counterfactual mechanisms on the market's municipal regions.

    M1 is serial dictatorship inside each home region (deferred acceptance
    when the profile has no master ranking); M2 and M3 run FIG cycles from
    M1's outcome under age-specific and cross-age regions; M4 is market-wide
    deferred acceptance under ``m4_priorities`` (default ``priorities``).
    """
    mech = MechanismId(mech)
    pri = priorities if priorities is not None else market.priorities
    if mech is MechanismId.M4_FULL_DA:
        pri4 = m4_priorities if m4_priorities is not None else pri
        return deferred_acceptance([st.preferences for st in market.students], pri4, market.capacity)
    cross = RegionScheme.cross_age(market)
    m1 = regionwise_sd(market, cross, pri)
    if mech is MechanismId.M1_REGIONWISE_SD:
        return m1
    scheme = RegionScheme.age_specific(market) if mech is MechanismId.M2_FIG_AGE_SPECIFIC else cross
    out, _ = fig_cycles_algorithm(m1, market, scheme, pri)
    return out


def regionwise_sd(market: MarketInstance, scheme: RegionScheme, priorities: PriorityProfile) -> Matching:
    if priorities.master_rank is None:
        return regionwise_sosm(market, scheme, priorities)
    order = np.argsort(priorities.master_rank, kind="stable").tolist()
    return serial_dictatorship(order, restrict_to_region(market, scheme), market.capacity)


def run_all_mechanisms(
    market: MarketInstance,
    priorities: PriorityProfile | None = None,
    m4_priorities: PriorityProfile | None = None,
) -> dict[MechanismId, Matching]:
    """All four mechanisms, sharing the M1 outcome as the FIG starting point."""
    pri = priorities if priorities is not None else market.priorities
    cross = RegionScheme.cross_age(market)
    m1 = regionwise_sd(market, cross, pri)
    m2, _ = fig_cycles_algorithm(m1, market, RegionScheme.age_specific(market), pri)
    m3, _ = fig_cycles_algorithm(m1, market, cross, pri)
    m4 = run_mechanism(MechanismId.M4_FULL_DA, market, pri, m4_priorities)
    return {
        MechanismId.M1_REGIONWISE_SD: m1,
        MechanismId.M2_FIG_AGE_SPECIFIC: m2,
        MechanismId.M3_FIG_CROSS_AGE: m3,
        MechanismId.M4_FULL_DA: m4,
    }
