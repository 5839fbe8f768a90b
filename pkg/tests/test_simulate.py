import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divratchet.errors import ParameterError
from divratchet.model import REFERENCE_PARAMS, ModelParams, g_value
from divratchet.simulate import (
    ConstantRule,
    SimConfig,
    SimResult,
    _feedback,
    estimate_value,
    parse_rule,
    path_streams,
    simulate_path,
    trace_csv,
)
from divratchet.strategy import Strategy, feedback_rate

from conftest import SIMPLE_PARAMS

P = REFERENCE_PARAMS


@pytest.mark.parametrize("spec, rate", [("constant:0.3", 0.3), ("constant:0", 0.0), ("constant:1e-2", 0.01)])
def test_parse_rule(spec, rate):
    assert parse_rule(spec) == ConstantRule(rate)


@pytest.mark.parametrize("spec", ["", "constant", "constant:", "constant:x", "optimal:1", "constant:-1", "constant:nan"])
def test_parse_rule_rejects(spec):
    with pytest.raises(ParameterError):
        parse_rule(spec)


@pytest.mark.parametrize(
    "kw", [dict(dt=0.0), dict(n_paths=0), dict(t_horizon=1e-6), dict(antithetic=True, n_paths=3), dict(seed=-1)]
)
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        SimConfig(**kw)


def test_deterministic_limit():
    p = ModelParams(mu=0.4, sigma=1e-6, r=0.05, c_bar=0.3)
    cfg = SimConfig(dt=1e-3, t_horizon=50.0, n_paths=4)
    res = estimate_value(p, ConstantRule(0.2), 1.0, 0.0, cfg)
    exact = 0.2 / p.r * (1 - math.exp(-p.r * 50.0))
    assert res.ruin_fraction == 0.0
    assert res.value_mean == pytest.approx(exact, rel=1e-4)


def test_tiny_start_ruins_at_once():
    res = estimate_value(P, ConstantRule(0.3), 1e-9, 0.0, SimConfig(n_paths=200))
    assert res.ruin_fraction == 1.0
    assert res.value_mean < 1e-3
    assert res.mean_ruin_time < 1e-2


def test_single_path_degenerate():
    cfg = SimConfig(n_paths=1, t_horizon=20.0, seed=3)
    res = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, cfg)
    one = simulate_path(P, ConstantRule(0.3), 1.0, 0.0, cfg, path_streams(3, 1)[0])
    assert res.degenerate and res.value_se == 0.0
    assert res.value_mean == one.payout


def test_bit_reproducible_and_worker_invariant():
    cfg = SimConfig(n_paths=3000, seed=11, t_horizon=50.0)
    a = estimate_value(P, ConstantRule(0.2), 1.0, 0.0, cfg)
    b = estimate_value(P, ConstantRule(0.2), 1.0, 0.0, cfg, workers=3)
    assert a.to_json() == b.to_json()
    c = estimate_value(P, ConstantRule(0.2), 1.0, 0.0, SimConfig(n_paths=3000, seed=12, t_horizon=50.0))
    assert c.value_mean != a.value_mean


def test_antithetic_not_worse():
    plain = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(n_paths=20000, seed=1))
    anti = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(n_paths=20000, seed=1, antithetic=True))
    assert anti.value_se <= 1.05 * plain.value_se
    assert abs(anti.value_mean - plain.value_mean) <= 4 * math.hypot(anti.value_se, plain.value_se)


def test_block_merging_preserves_law():
    cfg = dict(dt=1e-2, t_horizon=20.0, n_paths=20000, seed=4)
    fast = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(**cfg))
    slow = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(aggregate=False, **cfg))
    assert abs(fast.value_mean - slow.value_mean) <= 4 * math.hypot(fast.value_se, slow.value_se)
    assert abs(fast.ruin_fraction - slow.ruin_fraction) <= 0.02


def test_bridge_reduces_overstatement():
    cfg = dict(dt=5e-2, t_horizon=100.0, n_paths=20000, seed=5, aggregate=False)
    on = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(**cfg))
    off = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(bridge_correction=False, **cfg))
    g1 = g_value(P, 1.0)
    assert off.value_mean > on.value_mean
    assert abs(on.value_mean - g1) < abs(off.value_mean - g1)


def test_constant_rule_near_g():
    res = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(n_paths=20000, seed=9))
    assert abs(res.value_mean - g_value(P, 1.0)) <= 3 * res.value_se + 0.01
    assert 0 <= res.value_mean <= P.value_ceiling + 3 * res.value_se
    assert res.tail_bound == pytest.approx(math.exp(-P.r * 200.0) * 6.0)


def test_monotone_in_start():
    cfg = SimConfig(n_paths=8000, seed=2)
    vals = [estimate_value(P, ConstantRule(0.3), x0, 0.0, cfg) for x0 in (0.5, 1.0, 2.0)]
    for a, b in zip(vals, vals[1:]):
        assert b.value_mean >= a.value_mean - 3 * math.hypot(a.value_se, b.value_se)


def test_monotone_in_rate(ref_surface):
    cfg = SimConfig(n_paths=8000, seed=2)
    s = Strategy.from_surface(ref_surface, 0.0)
    vals = [estimate_value(P, s, 1.0, c0, cfg) for c0 in (0.0, 0.15, 0.3)]
    for a, b in zip(vals, vals[1:]):
        assert b.value_mean <= a.value_mean + 3 * math.hypot(a.value_se, b.value_se)


@given(st.floats(0.0, 0.3), st.floats(0.0, 4.0))
@settings(max_examples=200, deadline=None)
def test_kernel_feedback_matches_strategy(ref_surface, c_init, x):
    s = Strategy.from_surface(ref_surface, c_init)
    k = _feedback(x, c_init, s.c_bar, s.c_knots, s.x_knots, s.start_threshold, s.cap_threshold)
    assert k == feedback_rate(s, x)


def test_trace_is_admissible(ref_surface):
    s = Strategy.from_surface(ref_surface, 0.05)
    cfg = SimConfig(t_horizon=30.0)
    res = simulate_path(P, s, 1.0, 0.05, cfg, path_streams(8, 1)[0], trace=True)
    tr = res.trace
    assert tr[0, 0] == 0.0 and tr[0, 1] == 1.0
    assert np.all(np.diff(tr[:, 0]) > 0)
    assert np.all(np.diff(tr[:, 2]) >= 0)
    assert np.all((tr[:, 2] >= 0.05) & (tr[:, 2] <= P.c_bar))
    text = trace_csv(tr)
    assert text.splitlines()[0] == "t,X,C" and len(text.splitlines()) == tr.shape[0] + 1


def test_strategy_starts_capped_above_top_boundary(ref_surface):
    s = Strategy.from_surface(ref_surface, 0.0)
    x0 = s.cap_threshold + 1.0
    res = estimate_value(P, s, x0, 0.0, SimConfig(n_paths=20000, seed=6))
    assert abs(res.value_mean - g_value(P, x0)) <= 3 * res.value_se + 0.01


def test_simple_regime_cap_is_best(simple_surface):
    p = SIMPLE_PARAMS
    cfg = SimConfig(n_paths=20000, seed=7)
    best = estimate_value(p, ConstantRule(p.c_bar), 0.5, 0.0, cfg)
    assert abs(best.value_mean - g_value(p, 0.5)) <= 3 * best.value_se + 1e-3
    for rule in (ConstantRule(0.5 * p.c_bar), ConstantRule(0.0), Strategy.from_surface(simple_surface, 0.0)):
        alt = estimate_value(p, rule, 0.5, 0.0, cfg)
        assert alt.value_mean <= best.value_mean + 3 * math.hypot(alt.value_se, best.value_se)


def test_rule_validation():
    cfg = SimConfig(n_paths=2)
    with pytest.raises(ParameterError):
        estimate_value(P, ConstantRule(0.5), 1.0, 0.0, cfg)
    with pytest.raises(ParameterError):
        estimate_value(P, ConstantRule(0.1), 1.0, 0.2, cfg)
    with pytest.raises(ParameterError):
        estimate_value(P, ConstantRule(0.1), 0.0, 0.0, cfg)


def test_result_json_round_trip():
    res = estimate_value(P, ConstantRule(0.3), 1.0, 0.0, SimConfig(n_paths=10, seed=1))
    assert SimResult.from_json(res.to_json()) == res
