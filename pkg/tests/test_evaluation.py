import numpy as np
import pytest

from fragmatch.behavior import TrueUtilities
from fragmatch.errors import DecompositionUndefined, DomainError, InputError
from fragmatch.evaluation import (
    area_level_fit,
    border_classification,
    improvement_decomposition,
    multiplier,
    subdivision_stats,
    travel_time_equivalent,
    welfare_stats,
)
from fragmatch.market import AgeSchool, MarketInstance, Matching, RegionScheme, Student
from fragmatch.mechanisms import MechanismId, run_all_mechanisms
from fragmatch.synth import generate_market, grid_city


def three_child_market():
    schools = [AgeSchool(0, 0, 0, 0, 1), AgeSchool(1, 1, 0, 1, 1), AgeSchool(2, 2, 0, 1, 1)]
    students = [
        Student(0, 0, 0, (0, 1), tiebreak_rank=1),
        Student(1, 0, 1, (1, 2), tiebreak_rank=2),
        Student(2, 0, 1, (2,), tiebreak_rank=3),
    ]
    market = MarketInstance(students, schools)
    utils = TrueUtilities(
        values=np.array([[3.0, 2.0, 0.0], [0.0, 5.0, 4.0], [0.0, 0.0, 1.0]]),
        column=np.arange(3),
        outside=np.array([-1.0, -2.0, -3.0]),
    )
    return market, utils


# --- welfare statistics ----------------------------------------------------


def test_empty_matching_statistics():
    market, utils = three_child_market()
    w = welfare_stats(Matching.empty(3, 3), market, utils, RegionScheme.cross_age(market))
    assert w.n == 3 and w.match_rate == 0.0 and w.interregional_match_rate == 0.0
    assert w.avg_utility == pytest.approx(-2.0)
    # unmatched children sit one place below the end of their list
    assert w.avg_rank == pytest.approx((3 + 3 + 2) / 3)


def test_first_choices_give_rank_one():
    market, utils = three_child_market()
    mu = Matching.from_assignment([0, 1, 2], 3)
    w = welfare_stats(mu, market, utils, RegionScheme.cross_age(market), baseline=mu)
    assert w.avg_rank == 1.0 and w.match_rate == 1.0
    assert w.avg_utility == pytest.approx(3.0)
    assert w.improved_ratio == 0.0


def test_population_filter_and_interregional_rate():
    market, utils = three_child_market()
    mu = Matching.from_assignment([1, 2, -1], 3)
    scheme = RegionScheme.cross_age(market)
    w = welfare_stats(mu, market, utils, scheme, population=np.array([True, False, False]))
    assert w.n == 1 and w.interregional_match_rate == 1.0 and w.avg_rank == 2.0
    assert welfare_stats(mu, market, utils, scheme, population=np.zeros(3, bool)).n == 0


def test_baseline_from_other_market_rejected():
    market, utils = three_child_market()
    with pytest.raises(InputError):
        welfare_stats(Matching.empty(3, 3), market, utils, RegionScheme.cross_age(market),
                      baseline=Matching.empty(2, 3))


# --- border flags ----------------------------------------------------------


def test_border_flags(rng):
    sub = np.repeat([0, 1], 50)
    assert not border_classification(sub, [0.0, 0.0], rng).any()
    flags = border_classification(sub, {0: 1.0, 1: 0.0}, rng)
    assert flags[:50].all() and not flags[50:].any()
    half = border_classification(np.zeros(10**6, dtype=int), [0.5], rng)
    assert abs(half.mean() - 0.5) < 0.002
    with pytest.raises(DomainError):
        border_classification(sub, [1.5, 0.0], rng)


# --- decomposition ---------------------------------------------------------


def test_multiplier_plug_in():
    assert multiplier(72.6, 27.4) == pytest.approx(1.378, abs=1e-3)
    assert multiplier(1.0, 0.0) == 1.0
    with pytest.raises(DecompositionUndefined):
        multiplier(0.0, 1.0)


def test_decomposition_needs_dominance_and_a_crossing_gain():
    market, _ = three_child_market()
    scheme = RegionScheme.cross_age(market)
    base = Matching.from_assignment([0, 2, -1], 3)
    mech = Matching.from_assignment([0, 1, 2], 3)
    # both gains stay inside region 1, so there is nothing to divide by
    with pytest.raises(DecompositionUndefined):
        improvement_decomposition(mech, base, np.zeros(3, bool), scheme, market)

    base = Matching.from_assignment([-1, 1, 2], 3)
    mech = Matching.from_assignment([1, 2, -1], 3)
    with pytest.raises(DecompositionUndefined, match="dominate"):
        improvement_decomposition(mech, base, np.zeros(3, bool), scheme, market)


def test_interregional_only_gains_give_unit_multiplier():
    schools = [AgeSchool(0, 0, 0, 0, 1), AgeSchool(1, 1, 0, 1, 1)]
    students = [Student(0, 0, 0, (1, 0), tiebreak_rank=1), Student(1, 0, 1, (0, 1), tiebreak_rank=2)]
    market = MarketInstance(students, schools)
    base = Matching.from_assignment([0, 1], 2)
    swapped = Matching.from_assignment([1, 0], 2)
    d = improvement_decomposition(swapped, base, np.array([True, False]), RegionScheme.cross_age(market), market)
    assert d.multiplier == 1.0
    assert d.shares == {"border_interregional": 0.5, "border_local": 0.0,
                        "nonborder_interregional": 0.5, "nonborder_local": 0.0}


def test_no_improvement_is_undefined():
    market, _ = three_child_market()
    mu = Matching.from_assignment([0, 1, 2], 3)
    with pytest.raises(DecompositionUndefined):
        improvement_decomposition(mu, mu, np.zeros(3, bool), RegionScheme.cross_age(market), market)


# --- area fit and travel time ----------------------------------------------


def test_area_level_fit_examples():
    mu = Matching.from_assignment([0, 1, 0], 2)
    assert area_level_fit(mu, mu, [0, 1], [0, 0]) == 0.0
    # ten children at one age: all in area 0 against all in area 1
    sim = Matching.from_assignment([0] * 10, 2)
    act = Matching.from_assignment([1] * 10, 2)
    assert area_level_fit(sim, act, [0, 1], [0, 0]) == 10.0
    assert area_level_fit(sim, act, [0, 1], [0, 0], weighted=False) == 10.0
    with pytest.raises(InputError):
        area_level_fit(sim, act, [0], [0, 0])


def test_travel_time_equivalent():
    assert travel_time_equivalent(1.187 - 0.854, 3.945) == pytest.approx(8.44, abs=0.01)
    assert travel_time_equivalent(1.847 - 1.643, 2.492) == pytest.approx(8.19, abs=0.01)
    assert travel_time_equivalent(0.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        travel_time_equivalent(1.0, 0.0)


# --- invariants on synthetic markets ---------------------------------------


@pytest.fixture(scope="module")
def batch():
    config = grid_city(scale=0.01, seed=17)
    out = []
    for k in range(4):
        sm = generate_market(config, k)
        out.append((sm, run_all_mechanisms(sm.market, sm.priorities, sm.m4_priorities)))
    return out


def test_welfare_ordering_and_interregional_gains(batch, rng):
    for sm, outcomes in batch:
        market = sm.market
        scheme = RegionScheme.cross_age(market)
        base = outcomes[MechanismId.M1_REGIONWISE_SD]
        stats = {m: welfare_stats(mu, market, sm.utilities, scheme, baseline=base) for m, mu in outcomes.items()}
        for w in stats.values():
            assert 0 <= w.match_rate <= 1 and 0 <= w.interregional_match_rate <= 1 and w.avg_rank >= 1
        u = {m: w.avg_utility for m, w in stats.items()}
        assert u["m4"] >= u["m3"] - 1e-9 and u["m3"] >= u["m1"] - 1e-9
        assert u["m4"] >= u["m2"] - 1e-9 and u["m2"] >= u["m1"] - 1e-9
        for m in ("m2", "m3", "m4"):
            assert stats[m].match_rate >= stats["m1"].match_rate
        for m in ("m2", "m3"):
            assert stats[m].improved_ratio >= stats[m].interregional_match_rate - 1e-12
            border = rng.random(market.n_students) < 0.3
            try:
                d = improvement_decomposition(outcomes[m], base, border, scheme, market)
            except DecompositionUndefined:
                continue
            assert sum(d.shares.values()) == pytest.approx(1.0, abs=1e-9)
            assert min(d.shares.values()) >= 0 and d.multiplier >= 1


def test_subdivision_rows_cover_children(batch):
    sm, outcomes = batch[0]
    scheme = RegionScheme.cross_age(sm.market)
    rows = subdivision_stats(outcomes["m3"], outcomes["m1"], sm.utilities, sm.subdivision, scheme)
    assert sum(r.n for r in rows) == sm.market.n_students
    assert all(r.utility_improvement >= -1e-12 for r in rows)
