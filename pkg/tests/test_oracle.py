import numpy as np
import pytest

from fragmatch.errors import BoundExceeded
from fragmatch.market import AgeSchool, ExplicitPriorities, MarketInstance, Matching, RegionScheme, Student
from fragmatch.mechanisms import deferred_acceptance, regionwise_sosm
from fragmatch.oracle import (
    check_corpus,
    check_market,
    efficient_ibf_set,
    enumerate_feasible,
    ibf_set,
    random_market,
    stable_set,
    student_optimal,
)


def one_by_one(capacity=1):
    return MarketInstance([Student(0, 0, 0, (0,), tiebreak_rank=1)], [AgeSchool(0, 0, 0, 0, capacity)])


def test_single_pair_has_two_matchings():
    assert {m.key() for m in enumerate_feasible(one_by_one())} == {(-1,), (0,)}


def test_swap_market_has_seven_feasible_matchings(swap_market):
    keys = {m.key() for m in enumerate_feasible(swap_market)}
    assert keys == {(-1, -1), (0, -1), (-1, 1), (0, 1), (1, -1), (-1, 0), (1, 0)}


def test_zero_capacity_only_empty_matching():
    schools = [AgeSchool(0, 0, 0, 0, 0), AgeSchool(1, 1, 0, 1, 0)]
    students = [Student(0, 0, 0, (0, 1), tiebreak_rank=1), Student(1, 0, 1, (1,), tiebreak_rank=2)]
    assert [m.key() for m in enumerate_feasible(MarketInstance(students, schools))] == [(-1, -1)]


def test_swap_market_efficient_ibf_is_the_swap(swap_market):
    out = efficient_ibf_set(swap_market, RegionScheme.cross_age(swap_market))
    assert [m.key() for m in out] == [(1, 0)]


def test_single_region_efficient_ibf_is_student_optimal_stable():
    for seed in range(30):
        market = random_market(np.random.default_rng(seed), regions=(1, 1))
        (only,) = efficient_ibf_set(market, RegionScheme.single(market))
        assert only == student_optimal(market, stable_set(market))


def test_empty_matching_is_always_an_ibf():
    for seed in range(30):
        market = random_market(np.random.default_rng(seed))
        scheme = RegionScheme.cross_age(market)
        assert Matching.empty(market.n_students, market.n_schools) in ibf_set(market, scheme)
        assert efficient_ibf_set(market, scheme)


def test_stable_set_of_one_pair():
    assert [m.key() for m in stable_set(one_by_one())] == [(0,)]


def test_textbook_two_by_two_stable_set():
    # opposed preferences: both the student-optimal and the school-optimal matching are stable
    schools = [AgeSchool(0, 0, 0, 0, 1), AgeSchool(1, 1, 0, 0, 1)]
    students = [Student(0, 0, 0, (0, 1), tiebreak_rank=1), Student(1, 0, 0, (1, 0), tiebreak_rank=2)]
    market = MarketInstance(students, schools, ExplicitPriorities([(1, 0), (0, 1)], 2))
    assert {m.key() for m in stable_set(market)} == {(0, 1), (1, 0)}
    assert student_optimal(market, stable_set(market)).key() == (0, 1)


def test_da_output_dominates_stable_set():
    for seed in range(50):
        market = random_market(np.random.default_rng(seed))
        da = deferred_acceptance([s.preferences for s in market.students], market.priorities, market.capacity)
        members = stable_set(market)
        assert da in members
        assert student_optimal(market, members) == da


def test_regionwise_sosm_is_an_ibf_when_locals_favored():
    for seed in range(50):
        market = random_market(np.random.default_rng(seed))
        scheme = RegionScheme.cross_age(market)
        assert regionwise_sosm(market, scheme) in ibf_set(market, scheme)


def test_bounds_are_enforced():
    n = 9
    schools = [AgeSchool(0, 0, 0, 0, 1)]
    students = [Student(i, 0, 0, (0,), tiebreak_rank=i + 1) for i in range(n)]
    with pytest.raises(BoundExceeded):
        enumerate_feasible(MarketInstance(students, schools))


def test_corpus_is_replayable():
    a, b = check_corpus(17, 50), check_corpus(17, 50)
    assert a == b and a.passed == 50


def test_check_market_catches_nothing_on_swap(swap_market):
    assert check_market(swap_market) == ()
