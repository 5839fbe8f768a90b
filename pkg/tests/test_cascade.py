import math

import numpy as np
import pytest

from divratchet.cascade import (
    CascadeConfig,
    CascadeSolution,
    LevelGrid,
    RefineConfig,
    assemble_surface,
    boundary_csv,
    boundary_inverse,
    boundary_knots,
    cascade_violations,
    default_x_max,
    extract_free_boundary,
    read_boundary_csv,
    read_surface_csv,
    refine_until_converged,
    solve_cascade,
    surface_csv,
)
from divratchet.errors import CascadeError, ConsistencyError, ParameterError, TruncationError
from divratchet.model import REFERENCE_PARAMS, Regime, g_value, super_solution
from divratchet.obstacle import SolverConfig, SpatialGrid

from conftest import SIMPLE_PARAMS

P = REFERENCE_PARAMS


def test_level_grid():
    lv = LevelGrid(64, 0.3)
    c = lv.c
    assert c[0] == 0.3 and c[-1] == 0.0
    assert np.all(np.diff(c) < 0)
    assert lv.delta_c == pytest.approx(0.3 / 64)
    with pytest.raises(ParameterError):
        LevelGrid(0, 0.3)


def test_default_truncation_point():
    assert default_x_max(P) == pytest.approx(4 * super_solution(P).x_inf + 10 / 1.6327822185373189)


@pytest.mark.parametrize(
    "gap, expect",
    [
        (np.zeros(11), 0.0),
        (np.maximum(0.0, 1.0 - np.linspace(0, 10, 11)), 1.0),
    ],
)
def test_extract_free_boundary_constructed(gap, expect):
    grid = SpatialGrid(1.0, 11)
    base = np.linspace(0, 1, 11)
    assert extract_free_boundary(base + gap, base, grid, 1e-12) == pytest.approx(expect)


def test_extract_free_boundary_quadratic_contact():
    # gap (x0 - x)^2 closes at x0 between nodes; sqrt extrapolation recovers it
    grid = SpatialGrid(0.1, 51)
    x0 = 2.337
    gap = np.where(grid.x < x0, (x0 - grid.x) ** 2, 0.0)
    assert extract_free_boundary(gap, np.zeros(51), grid, 1e-14) == pytest.approx(x0, abs=1e-9)


def test_extract_free_boundary_truncation():
    grid = SpatialGrid(0.1, 11)
    with pytest.raises(TruncationError):
        extract_free_boundary(np.ones(11), np.zeros(11), grid, 1e-10)


def test_zero_c_bar_is_degenerate():
    with pytest.raises(ParameterError):
        solve_cascade(type(P)(0.4, 0.4, 0.05, 0.0))


def test_single_level():
    cs = solve_cascade(P, CascadeConfig(n=1, h=4e-3))
    gap = cs.v[1] - cs.v[0]
    x1 = cs.x_free[1]
    assert 0 < x1 < cs.grid.x_max
    inside = (cs.grid.x > 0) & (cs.grid.x < x1 - 4e-3)
    assert np.all(gap[inside] > 0)
    assert np.all(gap >= -1e-12)


def test_ref_cascade_invariants(ref_cascade):
    cs = ref_cascade
    assert cs.regime is Regime.COMPLICATED
    assert cascade_violations(cs, 1e-8 * P.value_ceiling) == []
    assert np.all(np.diff(cs.x_free[1:]) < 0)  # X increasing in c
    assert np.max(np.abs(cs.v[0] - g_value(P, cs.grid.x))) < 1e-5
    assert np.max(cs.residuals) < 1e-8 * P.value_ceiling


def test_first_boundary_stable_under_refinement(ref_cascade):
    fine = solve_cascade(P, CascadeConfig(n=64, h=1e-3, x_max=ref_cascade.grid.x_max))
    assert abs(fine.x_free[1] - ref_cascade.x_free[1]) <= 2 * ref_cascade.grid.h


def test_psor_backend_agrees_on_coarse_cascade():
    cfg = CascadeConfig(n=4, h=2e-2)
    a = solve_cascade(P, cfg)
    b = solve_cascade(P, CascadeConfig(n=4, h=2e-2, solver=SolverConfig.for_model(P, method="psor")))
    assert np.max(np.abs(a.v - b.v)) <= 10 * 1e-8 * P.value_ceiling


def test_level_failure_names_level():
    cfg = CascadeConfig(n=4, h=2e-2, solver=SolverConfig(method="psor", max_iter=2))
    with pytest.raises(CascadeError) as err:
        solve_cascade(P, cfg)
    assert err.value.level == 1


def test_domain_grows_when_boundary_near_edge():
    cs = solve_cascade(P, CascadeConfig(n=8, h=1e-2, x_max=1.5))
    assert cs.grid.x_max > 1.5
    assert cs.x_free[1] <= 0.9 * cs.grid.x_max


@pytest.mark.parametrize("short_circuit", [True, False])
def test_simple_regime_cascade(short_circuit):
    cs = solve_cascade(SIMPLE_PARAMS, CascadeConfig(n=16, short_circuit_simple=short_circuit))
    assert cs.regime is Regime.SIMPLE
    assert np.max(np.abs(cs.v - cs.v[0])) <= 1e-9
    assert np.all(cs.u == 0.0)
    assert np.all(cs.x_free[1:] == 0.0)


def test_surface_collocation_and_edges(ref_surface):
    s = ref_surface
    cs = s.cascade
    i, j = 10, 321
    assert s.v(cs.grid.x[j], cs.levels.c[i]) == cs.v[i, j]
    x = np.linspace(0, 8, 17)
    assert np.allclose(s.v(x, P.c_bar), g_value(P, x), atol=1e-5)
    assert np.all(s.v(0.0, np.linspace(0, P.c_bar, 7)) == 0.0)
    assert s.v(50.0, 0.1) == pytest.approx(g_value(P, 50.0))
    with pytest.raises(ParameterError):
        s.v(-1.0, 0.1)


def test_surface_decreasing_in_c(ref_surface):
    cs = ref_surface.cascade
    assert np.all(cs.v[:-1] <= cs.v[1:] + 1e-12)


def test_boundary_knots_shape(ref_surface):
    s = ref_surface
    assert s.c_knots[0] == 0.0 and s.c_knots[-1] == P.c_bar
    assert np.all(np.diff(s.x_knots) > 0)
    assert s.boundary(P.c_bar) == pytest.approx(2.0455, abs=0.01)


def test_boundary_round_trip(ref_surface):
    s = ref_surface
    xs = np.linspace(s.x_knots[0], s.x_knots[-1], 50)[1:-1]
    assert np.max(np.abs(s.boundary(s.boundary_inverse(xs)) - xs)) <= s.grid.h
    cs = np.linspace(0.01, 0.29, 30)
    assert np.allclose(s.boundary_inverse(s.boundary(cs)), cs, atol=1e-9)


def test_inverse_flat_spot_takes_leftmost():
    ck = np.array([0.0, 0.1, 0.2, 0.3])
    xk = np.array([1.0, 1.5, 1.5, 2.0])
    assert boundary_inverse(ck, xk, 1.5) == 0.1
    assert boundary_inverse(ck, xk, 0.5) == 0.0
    assert boundary_inverse(ck, xk, 9.0) == 0.3


def test_boundary_knots_reject_big_dip(ref_cascade):
    cs = CascadeSolution(**{k: getattr(ref_cascade, k) for k in
                            ("params", "grid", "levels", "v", "u", "regime")},
                         x_free=ref_cascade.x_free.copy())
    cs.x_free[30] += 0.1
    with pytest.raises(ConsistencyError):
        boundary_knots(cs)


def test_simple_surface_boundary(simple_surface):
    assert np.all(simple_surface.x_knots == 0.0)


def test_csv_round_trip(small_surface):
    text = surface_csv(small_surface)
    assert text.startswith("x,c,v,u\n") and "\r" not in text
    back = read_surface_csv(text, P)
    cs = small_surface.cascade
    assert np.max(np.abs(back.v - cs.v)) <= 1e-11 * P.value_ceiling
    assert np.allclose(back.x_free[1:], cs.x_free[1:], atol=cs.grid.h)
    c, x = read_boundary_csv(boundary_csv(small_surface))
    assert c.size == cs.n + 1
    assert np.all(np.diff(x) >= 0)


def test_csv_rejects_garbage():
    with pytest.raises(ParameterError):
        read_surface_csv("a,b\n1,2\n", P)


def test_refinement_report():
    surface, rep = refine_until_converged(P, RefineConfig(n0=16, h0=8e-3, max_steps=3, tol_conv=1e-12))
    assert not rep.converged
    assert len(rep.runs) == 3 and len(rep.v_diffs) == 2
    assert rep.v_diffs[1] < rep.v_diffs[0]
    assert surface.cascade.n == 64


def test_refinement_simple_regime_converges_at_once():
    _, rep = refine_until_converged(SIMPLE_PARAMS, RefineConfig(n0=8, h0=8e-3))
    assert rep.converged and len(rep.runs) == 2
    assert rep.v_diffs[0] < 1e-5
