import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fragmatch.errors import InputError
from fragmatch.market import (
    UNMATCHED,
    AgeSchool,
    MarketInstance,
    Matching,
    ParetoRelation,
    RegionScheme,
    Student,
    check_feasible,
    flow_report,
    is_balanced,
    is_individually_rational,
    justified_envy_pairs,
    locals_favored,
    pareto_compare,
    validate_market,
)
from fragmatch.oracle import random_market

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_matching(market: MarketInstance, rng: np.random.Generator) -> Matching:
    """Random feasible, age-compatible matching (not necessarily individually rational)."""
    left = market.capacity.copy()
    mu = Matching.empty(market.n_students, market.n_schools)
    for i in rng.permutation(market.n_students):
        options = [s for s in range(market.n_schools) if market.school_age[s] == market.student_age[i] and left[s] > 0]
        if options and rng.random() < 0.8:
            s = int(rng.choice(options))
            left[s] -= 1
            mu.match(int(i), s)
    return mu


def brute_envy(mu: Matching, market: MarketInstance) -> list[tuple[int, int, int]]:
    pri = market.priorities
    out = []
    for i, student in enumerate(market.students):
        prefs = student.preferences
        own = prefs.index(mu.assign[i]) if mu.assign[i] in prefs else len(prefs)
        for j in range(market.n_students):
            s = int(mu.assign[j])
            if s == UNMATCHED or j == i or s not in prefs:
                continue
            if prefs.index(s) < own and pri.prefers(s, i, j):
                out.append((i, j, s))
    return sorted(out)


# --- validate_market -------------------------------------------------------


def test_well_formed_market_has_no_violations(swap_market):
    assert validate_market(swap_market) == []


def test_age_mismatch_is_reported():
    schools = [AgeSchool(0, 0, 1, 0, 1)]
    students = [Student(0, 0, 0, preferences=(0,), tiebreak_rank=1)]
    rules = [v.rule for v in validate_market(MarketInstance(students, schools))]
    assert rules == ["AgeMismatch"]


def test_tiebreak_collision_within_age_group():
    schools = [AgeSchool(0, 0, 0, 0, 1)]
    students = [Student(0, 0, 0, tiebreak_rank=3), Student(1, 0, 0, tiebreak_rank=3)]
    rules = [v.rule for v in validate_market(MarketInstance(students, schools))]
    assert rules == ["TiebreakCollision"]


def test_equal_tiebreak_across_ages_is_allowed():
    schools = [AgeSchool(0, 0, 0, 0, 1)]
    students = [Student(0, 0, 0, tiebreak_rank=1), Student(1, 1, 0, tiebreak_rank=1)]
    assert validate_market(MarketInstance(students, schools)) == []


def test_facility_split_across_regions_is_reported():
    schools = [AgeSchool(0, 7, 0, 0, 1), AgeSchool(1, 7, 1, 1, 1)]
    rules = [v.rule for v in validate_market(MarketInstance([], schools))]
    assert rules == ["RegionInconsistent"]


# --- check_feasible --------------------------------------------------------


def test_empty_matching_is_feasible(swap_market):
    assert check_feasible(Matching.empty(2, 2), swap_market) == []


def test_capacity_exceeded():
    schools = [AgeSchool(0, 0, 0, 0, 1)]
    students = [Student(0, 0, 0, (0,), tiebreak_rank=1), Student(1, 0, 0, (0,), tiebreak_rank=2)]
    market = MarketInstance(students, schools)
    mu = Matching.from_assignment([0, 0], 1)
    assert [v.rule for v in check_feasible(mu, market)] == ["CapacityExceeded"]


def test_inconsistent_roster(swap_market):
    mu = Matching([0, UNMATCHED], [set(), set()])
    assert [v.rule for v in check_feasible(mu, swap_market)] == ["InconsistentRoster"]


def test_unknown_id_raises(swap_market):
    with pytest.raises(InputError):
        check_feasible(Matching.empty(3, 2), swap_market)


# --- individual rationality and envy --------------------------------------


def test_individual_rationality(swap_market):
    assert is_individually_rational(Matching.empty(2, 2), swap_market)
    assert is_individually_rational(Matching.from_assignment([1, 0], 2), swap_market)
    schools = [AgeSchool(0, 0, 0, 0, 1), AgeSchool(1, 1, 0, 0, 1)]
    market = MarketInstance([Student(0, 0, 0, (0,), tiebreak_rank=1)], schools)
    assert not is_individually_rational(Matching.from_assignment([1], 2), market)


def test_unmatched_child_envies_lower_priority_holder():
    schools = [AgeSchool(0, 0, 0, 0, 1)]
    students = [
        Student(0, 0, 0, (0,), score=10.0, tiebreak_rank=1),
        Student(1, 0, 0, (0,), score=5.0, tiebreak_rank=2),
    ]
    market = MarketInstance(students, schools)
    assert justified_envy_pairs(Matching.from_assignment([UNMATCHED, 0], 1), market) == [(0, 1, 0)]


def test_everyone_at_first_choice_has_no_envy(swap_market):
    assert justified_envy_pairs(Matching.from_assignment([1, 0], 2), swap_market) == []


def test_swap_outcomes_are_envy_free(swap_market):
    assert justified_envy_pairs(Matching.from_assignment([0, 1], 2), swap_market) == []
    assert justified_envy_pairs(Matching.from_assignment([1, 0], 2), swap_market) == []


@given(seeds)
def test_envy_pairs_match_brute_force_scan(seed):
    rng = np.random.default_rng(seed)
    market = random_market(rng, max_students=8, max_schools=5)
    mu = random_matching(market, rng)
    assert sorted(justified_envy_pairs(mu, market)) == brute_envy(mu, market)


# --- balancedness ----------------------------------------------------------


def test_empty_matching_is_balanced(swap_market):
    for scheme in (RegionScheme.cross_age(swap_market), RegionScheme.age_specific(swap_market)):
        report, ok = is_balanced(Matching.empty(2, 2), scheme)
        assert ok and report.inflow.sum() == 0 and report.outflow.sum() == 0


def test_swap_is_balanced(swap_market):
    report, ok = is_balanced(Matching.from_assignment([1, 0], 2), RegionScheme.cross_age(swap_market))
    assert ok
    assert report.inflow.tolist() == [1, 1] and report.outflow.tolist() == [1, 1]


def test_one_way_move_is_unbalanced(swap_market):
    report, ok = is_balanced(Matching.from_assignment([1, UNMATCHED], 2), RegionScheme.cross_age(swap_market))
    assert not ok
    assert report.inflow.tolist() == [0, 1] and report.outflow.tolist() == [1, 0]


@given(seeds)
def test_total_inflow_equals_total_outflow(seed):
    rng = np.random.default_rng(seed)
    market = random_market(rng, max_students=8, max_schools=5)
    mu = random_matching(market, rng)
    for scheme in (RegionScheme.cross_age(market), RegionScheme.age_specific(market)):
        report = flow_report(mu, scheme)
        assert (report.inflow >= 0).all() and (report.outflow >= 0).all()
        assert report.inflow.sum() == report.outflow.sum()


@given(seeds)
def test_regionwise_matching_is_balanced_under_every_scheme(seed):
    rng = np.random.default_rng(seed)
    market = random_market(rng, max_students=8, max_schools=5)
    mu = random_matching(market, rng)
    for i in range(market.n_students):
        s = mu.assign[i]
        if s != UNMATCHED and market.school_region[s] != market.student_region[i]:
            mu.unmatch(i)
    for scheme in (RegionScheme.cross_age(market), RegionScheme.age_specific(market), RegionScheme.single(market)):
        assert is_balanced(mu, scheme)[1]


@given(seeds)
def test_age_specific_balance_implies_cross_age_balance(seed):
    rng = np.random.default_rng(seed)
    market = random_market(rng, max_students=8, max_schools=5)
    mu = random_matching(market, rng)
    if is_balanced(mu, RegionScheme.age_specific(market))[1]:
        assert is_balanced(mu, RegionScheme.cross_age(market))[1]


def test_region_schemes_partition_everything(swap_market):
    for scheme in (
        RegionScheme.cross_age(swap_market),
        RegionScheme.age_specific(swap_market),
        RegionScheme.single(swap_market),
    ):
        assert scheme.violations() == []
    assert RegionScheme.single(swap_market).n_regions == 1


def test_default_priorities_favor_locals(swap_market):
    assert locals_favored(swap_market.priorities, swap_market, RegionScheme.cross_age(swap_market))


# --- Pareto comparison -----------------------------------------------------


def test_pareto_reflexive(swap_market):
    mu = Matching.from_assignment([0, 1], 2)
    assert pareto_compare(mu, mu, swap_market) is ParetoRelation.EQUAL


def test_swap_dominates_regionwise(swap_market):
    swap = Matching.from_assignment([1, 0], 2)
    local = Matching.from_assignment([0, 1], 2)
    assert pareto_compare(swap, local, swap_market) is ParetoRelation.FIRST_DOMINATES
    assert pareto_compare(local, swap, swap_market) is ParetoRelation.SECOND_DOMINATES


def test_opposite_moves_are_incomparable(swap_market):
    a = Matching.from_assignment([1, UNMATCHED], 2)
    b = Matching.from_assignment([UNMATCHED, 0], 2)
    assert pareto_compare(a, b, swap_market) is ParetoRelation.INCOMPARABLE


FLIP = {
    ParetoRelation.EQUAL: ParetoRelation.EQUAL,
    ParetoRelation.FIRST_DOMINATES: ParetoRelation.SECOND_DOMINATES,
    ParetoRelation.SECOND_DOMINATES: ParetoRelation.FIRST_DOMINATES,
    ParetoRelation.INCOMPARABLE: ParetoRelation.INCOMPARABLE,
}


@given(seeds)
def test_pareto_compare_is_a_partial_order(seed):
    rng = np.random.default_rng(seed)
    market = random_market(rng, max_students=8, max_schools=5)
    mus = [random_matching(market, rng) for _ in range(4)]
    for a, b in itertools.permutations(mus, 2):
        assert pareto_compare(b, a, market) is FLIP[pareto_compare(a, b, market)]
    at_least = {ParetoRelation.EQUAL, ParetoRelation.FIRST_DOMINATES}
    for a, b, c in itertools.permutations(mus, 3):
        if pareto_compare(a, b, market) in at_least and pareto_compare(b, c, market) in at_least:
            assert pareto_compare(a, c, market) in at_least
