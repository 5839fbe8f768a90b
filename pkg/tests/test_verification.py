import json

import numpy as np
import pytest

from divratchet.cascade import ConvergenceReport
from divratchet.model import REFERENCE_PARAMS
from divratchet.simulate import SimConfig
from divratchet.strategy import Strategy
from divratchet.verification import (
    NEGATIVE_CONTROLS,
    VerifyConfig,
    check_boundary_identity,
    check_convergence,
    cross_validate_mc,
    mc_allowance,
    verify_surface,
)

P = REFERENCE_PARAMS


def test_ref_surface_passes(ref_surface):
    rep = verify_surface(ref_surface)
    assert rep.summary, rep.to_text()
    assert rep.worst_vi_residual <= 1e-6 * P.value_ceiling
    lo, hi = rep.boundary_slope_range
    assert 0 < lo < hi < np.inf


def test_simple_surface_passes(simple_surface):
    assert verify_surface(simple_surface).summary


def test_check_names_unique_and_covered(ref_surface):
    names = [c.name for c in verify_surface(ref_surface).checks]
    assert len(names) == len(set(names))
    assert set(NEGATIVE_CONTROLS) == set(names)


@pytest.mark.parametrize("name", sorted(NEGATIVE_CONTROLS))
def test_negative_control(ref_surface, name):
    bad = NEGATIVE_CONTROLS[name](ref_surface)
    rep = verify_surface(bad)
    assert not rep.get(name).passed
    assert not rep.summary
    # the corruption works on a copy
    assert verify_surface(ref_surface).get(name).passed


def test_deterministic(ref_surface):
    assert verify_surface(ref_surface).to_json() == verify_surface(ref_surface).to_json()


def test_stricter_margin_same_measurements(ref_surface):
    loose = verify_surface(ref_surface)
    strict = verify_surface(ref_surface, VerifyConfig(margin=0.5, tol_fit=1e-9))
    for a, b in zip(loose.checks, strict.checks):
        assert a.name == b.name and a.measured == b.measured
    assert not strict.summary
    assert set(strict.failed()) >= {"fb.vx_at_boundary", "fit.value"}


def test_report_serialisation(ref_surface):
    rep = verify_surface(ref_surface)
    d = json.loads(rep.to_json())
    assert d["summary"] == "pass" and len(d["checks"]) == len(rep.checks)
    assert rep.to_text().rstrip().endswith("summary: PASS")


def test_experimental_identity_is_reported_not_gating(ref_surface):
    res = check_boundary_identity(ref_surface)
    assert res.experimental
    rep = verify_surface(ref_surface, VerifyConfig(experimental=True))
    assert rep.get("fb.identity_xc").measured == res.measured
    rep.get("fb.identity_xc").passed = False
    assert rep.failed() == []


def test_convergence_check():
    good = ConvergenceReport(
        runs=[{"X_c_bar": 2.044}, {"X_c_bar": 2.0455}, {"X_c_bar": 2.0456}],
        v_diffs=[4e-5, 1e-5], x_diffs=[2e-3, 1e-3], converged=True, decreasing=True)
    assert all(c.passed for c in check_convergence(good, 1e-3))
    bad = ConvergenceReport(runs=good.runs, v_diffs=[1e-5, 4e-5], x_diffs=[1e-3, 2e-3],
                            converged=False, decreasing=False)
    assert not check_convergence(bad, 1e-3)[0].passed
    jumpy = ConvergenceReport(runs=[{"X_c_bar": 2.0}, {"X_c_bar": 2.1}], v_diffs=[1e-5],
                              x_diffs=[1e-3], converged=True, decreasing=True)
    assert not check_convergence(jumpy, 1e-3)[1].passed


def test_allowance_components(ref_surface, small_surface):
    a = mc_allowance(ref_surface, small_surface, 1.0, 0.1, 1e-3)
    grid_part = abs(ref_surface.v(1.0, 0.1) - small_surface.v(1.0, 0.1))
    assert grid_part < a < grid_part + 5e-3


def test_mc_cross_validation_and_its_negative_control(small_surface):
    cfg = SimConfig(n_paths=4000, seed=3)
    s = Strategy.from_surface(small_surface, 0.1)
    ok = cross_validate_mc(small_surface, s, [(1.0, 0.1)], cfg, coarse=small_surface)
    assert all(c.passed for c in ok), [(c.name, c.detail) for c in ok]
    shifted = NEGATIVE_CONTROLS["hjb.vi_residual"](small_surface)
    shifted.cascade.v = shifted.cascade.v + 0.5
    bad = cross_validate_mc(shifted, s, [(1.0, 0.1)], cfg, coarse=shifted)
    assert not bad[0].passed
    low = NEGATIVE_CONTROLS["hjb.vi_residual"](small_surface)
    low.cascade.v = low.cascade.v * 0.5
    bad = cross_validate_mc(low, s, [(1.0, 0.1)], cfg, coarse=low)
    assert not bad[1].passed
