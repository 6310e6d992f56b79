import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from fragmatch.errors import FlaggedValueWarning
from fragmatch.estimation.outside import (
    estimate_outside_option,
    fit_interval_mle,
    interval_loglik,
    outside_option_intervals,
    shift_qualities,
    simulated_intervals,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def golden_oracle(upper, lower):
    """Grid scan followed by golden-section refinement of the interval log-likelihood."""
    finite = np.concatenate([upper[np.isfinite(upper)], lower[np.isfinite(lower)]])
    grid = np.linspace(finite.min() - 5, finite.max() + 5, 4001)
    vals = [interval_loglik(a, upper, lower) for a in grid]
    k = int(np.argmax(vals))
    res = minimize_scalar(lambda a: -interval_loglik(a, upper, lower), method="golden",
                          bracket=(grid[max(k - 1, 0)], grid[k], grid[min(k + 1, len(grid) - 1)]),
                          tol=1e-12)
    return float(res.x)


def random_intervals(rng, n=300):
    upper = rng.normal(0, 1.5, n)
    lower = upper - rng.exponential(1.5, n)
    lower[rng.random(n) < 0.2] = -np.inf
    return upper, lower


def test_open_interval_diverges():
    with pytest.warns(FlaggedValueWarning):
        est = fit_interval_mle(np.array([0.0]), np.array([-np.inf]))
    assert est.divergent and est.alpha_bar == -np.inf


def test_symmetric_intervals():
    n = 50
    est = fit_interval_mle(np.ones(n), -np.ones(n))
    # the maximizer of F(1 - a) - F(-1 - a) solves e^a = 1 / sinh(1)
    assert est.alpha_bar == pytest.approx(-math.log(math.sinh(1.0)), abs=1e-9)
    assert est.alpha_bar == pytest.approx(golden_oracle(np.ones(n), -np.ones(n)), abs=1e-6)


@given(seeds)
def test_matches_golden_section_oracle(seed):
    upper, lower = random_intervals(np.random.default_rng(seed))
    assert fit_interval_mle(upper, lower).alpha_bar == pytest.approx(golden_oracle(upper, lower), abs=1e-6)


@given(seeds, st.floats(min_value=-20, max_value=20))
def test_translation_equivariance(seed, c):
    upper, lower = random_intervals(np.random.default_rng(seed))
    a = fit_interval_mle(upper, lower).alpha_bar
    assert fit_interval_mle(upper + c, lower + c).alpha_bar == pytest.approx(a + c, abs=1e-8)


def test_intervals_from_sorted_utilities():
    utils = [np.array([5.0, 4.0, 3.0, 2.0, 1.0, 0.0, -1.0]), np.array([2.0, 1.0])]
    upper, lower = outside_option_intervals(utils, [1, 2], ell=5)
    assert upper.tolist() == [5.0, 1.0]
    assert lower.tolist() == [0.0, -np.inf]
    with pytest.raises(ValueError):
        outside_option_intervals(utils, [1, 2], ell=0)


def test_estimate_recovers_outside_mean(rng):
    # with ell = 1 the interval is exactly where the shocked outside option fell
    n, m = 4000, 12
    U = rng.normal(0, 1, (n, m)) + rng.gumbel(size=(n, m))
    outside = 0.7 + rng.gumbel(size=n)
    S = -np.sort(-U, axis=1)
    K = (S > outside[:, None]).sum(axis=1)
    est = estimate_outside_option(list(S), K, ell=1)
    assert abs(est.alpha_bar - 0.7) < 0.1


def test_simulated_intervals_shapes(rng):
    V = rng.normal(size=(20, 6))
    upper, lower = simulated_intervals(V, np.ones((20, 6), dtype=bool), np.full(20, 2), rng, runs=3, ell=2)
    assert upper.shape == lower.shape == (60,)
    assert (upper >= lower).all()


def test_shift_qualities():
    assert shift_qualities(np.array([1.0, 2.0]), 0.5).tolist() == [0.5, 1.5]
