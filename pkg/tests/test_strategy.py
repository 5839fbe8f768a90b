import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divratchet.errors import ParameterError
from divratchet.model import REFERENCE_PARAMS, Regime
from divratchet.strategy import Strategy, feedback_rate, ratchet_update

P = REFERENCE_PARAMS


@pytest.fixture(scope="module")
def strat(ref_surface):
    return Strategy.from_surface(ref_surface, 0.1)


def test_branches(strat):
    lo, hi = strat.start_threshold, strat.cap_threshold
    assert feedback_rate(strat, 0.0) == 0.1
    assert feedback_rate(strat, lo) == 0.1  # closed first branch
    assert feedback_rate(strat, hi) == P.c_bar
    assert feedback_rate(strat, hi + 5) == P.c_bar
    assert 0.1 < feedback_rate(strat, 0.5 * (lo + hi)) < P.c_bar


def test_inverse_on_boundary(strat):
    for c in np.linspace(0.11, 0.29, 10):
        assert feedback_rate(strat, strat.boundary(c)) == pytest.approx(c, abs=1e-9)


def test_fixed_point_identity(strat, ref_surface):
    # X(rate(x)) = max(X(c_init), x) below the cap
    xs = np.linspace(0.0, strat.cap_threshold - 1e-6, 400)
    rates = feedback_rate(strat, xs)
    lhs = strat.boundary(rates)
    rhs = np.maximum(strat.start_threshold, xs)
    assert np.max(np.abs(lhs - rhs)) <= ref_surface.grid.h


def test_simple_regime_always_cap(simple_surface):
    s = Strategy.from_surface(simple_surface, 0.0)
    assert s.regime is Regime.SIMPLE
    assert np.all(feedback_rate(s, np.linspace(0, 3, 7)) == s.c_bar)


def test_rejects_bad_input(strat):
    with pytest.raises(ParameterError):
        feedback_rate(strat, -0.1)
    with pytest.raises(ParameterError):
        strat.with_start(0.5)
    with pytest.raises(ParameterError):
        Strategy(0.0, 0.3, Regime.COMPLICATED, np.array([0.0, 0.3]), np.array([2.0, 1.0]))


def test_json_round_trip(strat):
    back = Strategy.from_json(strat.to_json())
    assert back.c_init == strat.c_init and back.regime is strat.regime
    assert np.array_equal(back.c_knots, strat.c_knots) and np.array_equal(back.x_knots, strat.x_knots)
    with pytest.raises(ParameterError):
        Strategy.from_json('{"c_init": 0.1}')


@given(st.floats(0.0, 0.3), st.lists(st.floats(0.0, 4.0), min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_ratchet_paths_admissible(ref_surface, c_init, steps):
    s = Strategy.from_surface(ref_surface, c_init)
    maxima = np.maximum.accumulate(np.asarray(steps))
    rate = feedback_rate(s, maxima[0])
    rates = [rate]
    for m in maxima[1:]:
        rate = ratchet_update(s, rate, m)
        rates.append(rate)
    rates = np.array(rates)
    assert np.all(np.diff(rates) >= 0)
    assert np.all((rates >= c_init) & (rates <= P.c_bar))


@given(st.floats(0.0, 0.3), st.floats(0.0, 0.3), st.floats(0.0, 4.0))
@settings(max_examples=100, deadline=None)
def test_monotone_coupling(ref_surface, a, b, x):
    lo, hi = sorted((a, b))
    s_lo, s_hi = Strategy.from_surface(ref_surface, lo), Strategy.from_surface(ref_surface, hi)
    assert feedback_rate(s_lo, x) <= feedback_rate(s_hi, x)


def test_nondecreasing_in_x(strat):
    xs = np.linspace(0, 5, 2001)
    assert np.all(np.diff(feedback_rate(strat, xs)) >= 0)


def test_ratchet_keeps_rate_below_boundary(strat):
    assert ratchet_update(strat, 0.2, 0.3) == 0.2
    assert ratchet_update(strat, 0.2, 1e9) == P.c_bar
