"""Numerical assertion suite over a computed value surface and strategy.

Every check is a pure function of its inputs and returns ``CheckResult``
records; ``verify_surface`` bundles them into a ``VerificationReport``.
``NEGATIVE_CONTROLS`` maps each check to a corruption that must make it fail.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cascade import (
    CascadeConfig,
    ConvergenceReport,
    ValueSurface,
    assemble_surface,
    solve_cascade,
)
from .model import Regime, super_solution
from .obstacle import build_operator
from .simulate import ConstantRule, SimConfig, estimate_value
from .strategy import Strategy

# expected lag of a discretely sampled running maximum, in units of sigma sqrt(dt)
_MAX_LAG = 0.5826


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    experimental: bool = False


@dataclass(frozen=True)
class VerifyConfig:
    margin: float | None = None  # strictness margin; default max(10 h, 1e-3)
    tol_resid: float = 1e-6  # relative to c_bar / r
    tol_fit: float = 1e-4
    uc_cap: float | None = None  # default 10 K
    experimental: bool = False

    def resolve_margin(self, h: float) -> float:
        return self.margin if self.margin is not None else max(10.0 * h, 1e-3)


@dataclass
class VerificationReport:
    checks: list[CheckResult]
    worst_vi_residual: float
    boundary_slope_range: tuple[float, float]
    summary: bool = field(init=False)

    def __post_init__(self):
        self.summary = all(c.passed for c in self.checks if not c.experimental)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed and not c.experimental]

    def get(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "summary": "pass" if self.summary else "fail",
            "worst_vi_residual": self.worst_vi_residual,
            "boundary_slope_range": list(self.boundary_slope_range),
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            if c.experimental:
                tag += "*"
            lines.append(f"{tag:5s} {c.name:32s} measured={c.measured:.4g} tol={c.tolerance:.4g} {c.detail}".rstrip())
        lines.append(f"worst VI residual {self.worst_vi_residual:.3e}")
        lo, hi = self.boundary_slope_range
        lines.append(f"discrete X' range [{lo:.4g}, {hi:.4g}]")
        lines.append("summary: " + ("PASS" if self.summary else "FAIL"))
        return "\n".join(lines) + "\n"


def _finite(obj):
    # JSON has no inf/nan
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def _check(name, measured, tolerance, passed, detail="", experimental=False):
    return CheckResult(name, bool(passed), float(measured), float(tolerance), detail, experimental)


def _u(surface: ValueSurface) -> np.ndarray:
    # recomputed from v so that a corrupted v is seen by every check
    cs = surface.cascade
    return np.diff(cs.v, axis=0) / cs.levels.delta_c


def _pde_residuals(surface: ValueSurface) -> np.ndarray:
    """``-L_{c_i} v_i - c_i`` at interior nodes, one row per level."""
    cs = surface.cascade
    out = np.empty((cs.n + 1, cs.grid.nodes - 2))
    for i, c in enumerate(cs.levels.c):
        out[i] = build_operator(cs.params, c, cs.grid).apply(cs.v[i]) - c
    return out


def check_hjb(surface: ValueSurface, cfg: VerifyConfig = VerifyConfig()) -> list[CheckResult]:
    """Discrete ``min{-L_c v - c, -v_c} = 0`` and its two one-sided consequences."""
    cs = surface.cascade
    tol = cfg.tol_resid * cs.params.value_ceiling
    pde = _pde_residuals(surface)
    u = _u(surface)[:, 1:-1]
    vi = np.minimum(pde[1:], u)
    worst = float(np.max(np.abs(vi)))
    below = u > tol
    pde_below = max(float(np.max(np.abs(pde[1:][below]), initial=0.0)), float(np.max(np.abs(pde[0]))))
    above = cs.grid.x[1:-1][None, :] > cs.x_free[1:, None]
    vc_above = float(np.max(np.abs(u[above]), initial=0.0))
    return [
        _check("hjb.vi_residual", worst, tol, worst <= tol),
        _check("hjb.pde_where_vc_negative", pde_below, tol, pde_below <= tol),
        _check("hjb.vc_above_boundary", vc_above, tol, vc_above <= tol),
    ]


def boundary_slopes(surface: ValueSurface) -> np.ndarray:
    """Discrete ``X'`` between consecutive knots."""
    return np.diff(surface.x_knots) / np.diff(surface.c_knots)


def _left_stencil(u_i, x_i, h):
    k = int(math.floor(x_i / h + 1e-9))
    if k < 2:
        return None
    d1 = (u_i[k] - u_i[k - 1]) / h
    d2 = (u_i[k] - 2.0 * u_i[k - 1] + u_i[k - 2]) / h**2
    return k, float(u_i[k]), d1, d2


def check_free_boundary(surface: ValueSurface, cfg: VerifyConfig = VerifyConfig()) -> list[CheckResult]:
    cs = surface.cascade
    h = cs.grid.h
    margin = cfg.resolve_margin(h)
    if surface.regime is Regime.SIMPLE:
        note = "simple regime: no free boundary"
        return [_check(n, 0.0, 0.0, True, note) for n in (
            "fb.positive", "fb.slope_range", "fb.vc_below_boundary", "fb.vx_at_boundary",
            "fit.value", "fit.slope", "fit.slope_resolution", "fit.convexity")]
    out = []
    xmin = float(np.min(surface.x_knots))
    out.append(_check("fb.positive", xmin, 0.0, xmin > 0))
    sl = boundary_slopes(surface)
    cap = 1.0 / margin
    out.append(_check("fb.slope_range", float(sl.min()), margin,
                      sl.min() >= margin and sl.max() <= cap, f"range [{sl.min():.4g}, {sl.max():.4g}], cap {cap:.4g}"))
    u = _u(surface)
    x = cs.grid.x
    worst_below = math.inf
    for i in range(1, cs.n + 1):
        # two cells clear of both ends, where u is still O(h^2) but positive
        inside = (x >= 2 * h) & (x <= cs.x_free[i] - 2 * h)
        if inside.any():
            worst_below = min(worst_below, float(np.min(u[i - 1][inside])))
    out.append(_check("fb.vc_below_boundary", worst_below, 0.0, worst_below > 0, "min u strictly inside"))
    slopes = [float(np.interp(cs.x_free[i], x, np.gradient(cs.v[i - 1], h))) for i in range(1, cs.n + 1)]
    smax = max(slopes)
    out.append(_check("fb.vx_at_boundary", smax, 1.0 - margin, smax <= 1.0 - margin))
    vals, d1s, d2s, res = [], [], [], []
    for i in range(1, cs.n + 1):
        st = _left_stencil(u[i - 1], cs.x_free[i], h)
        if st is None:
            continue
        _, val, d1, d2 = st
        vals.append(val)
        d1s.append(d1)
        d2s.append(d2)
        # exact smooth fit still leaves |u'(x_k)| = u_xx (x_i - x_k + h/2) <= 1.5 h u_xx
        res.append(abs(d1) - 2.0 * h * max(d2, 0.0))
    out.append(_check("fit.value", max(vals), cfg.tol_fit, max(vals) <= cfg.tol_fit, "max u_i(x_i)"))
    out.append(_check("fit.slope", max(d1s), cfg.tol_fit, max(d1s) <= cfg.tol_fit, "max one-sided u_i'(x_i-)"))
    out.append(_check("fit.slope_resolution", max(res), cfg.tol_fit, max(res) <= cfg.tol_fit,
                      "max |u_i'(x_i-)| - 2 h u_xx"))
    out.append(_check("fit.convexity", min(d2s), 0.0, min(d2s) > 0, "min left second difference"))
    if cfg.experimental:
        out.append(check_boundary_identity(surface))
    return out


def check_boundary_identity(surface: ValueSurface, rel_tol: float = 0.25) -> CheckResult:
    """Experimental: ``X' = -u_xc / u_xx`` at the boundary, from level differences.

    With ``u_xc ~ u_{i-1}'(x_i) / dc`` and the left second difference of
    ``u_i``; mixed derivatives at a free boundary are noisy, hence the loose
    tolerance and the flag.
    """
    cs = surface.cascade
    h, dc = cs.grid.h, cs.levels.delta_c
    u = _u(surface)
    worst = 0.0
    for i in range(2, cs.n + 1):
        st = _left_stencil(u[i - 1], cs.x_free[i], h)
        if st is None or st[3] <= 0:
            continue
        ux_above = float(np.interp(cs.x_free[i], cs.grid.x, np.gradient(u[i - 2], h)))
        pred = -ux_above / (dc * st[3])
        direct = (cs.x_free[i - 1] - cs.x_free[i]) / dc
        if direct > 0:
            worst = max(worst, abs(pred - direct) / direct)
    return _check("fb.identity_xc", worst, rel_tol, worst <= rel_tol, "relative mismatch", experimental=True)


def check_estimates(surface: ValueSurface, cfg: VerifyConfig = VerifyConfig(),
                    reference: ValueSurface | None = None) -> list[CheckResult]:
    """A priori bounds on ``v``, ``v_x``, ``v_c``, ``u`` and ``u_c``."""
    cs = surface.cascade
    p, h = cs.params, cs.grid.h
    tol = cfg.tol_resid * p.value_ceiling
    k_slope = super_solution(p).slope_bound
    v = cs.v
    out = []
    lo, hi = float(v.min()), float(v.max())
    out.append(_check("est.v_bounds", hi, p.value_ceiling, lo >= -tol and hi <= p.value_ceiling + tol,
                      f"range [{lo:.6g}, {hi:.6g}]"))
    v0 = float(np.max(np.abs(v[:, 0])))
    out.append(_check("est.v_at_zero", v0, tol, v0 <= tol))
    fwd = np.diff(v, axis=1) / h
    out.append(_check("est.vx_bounds", float(fwd.max()), k_slope,
                      fwd.min() >= -tol / h and fwd.max() <= k_slope, f"min {fwd.min():.3g}"))
    u = _u(surface)
    out.append(_check("est.vc_bounds", float(u.max()), k_slope, u.min() >= -tol and u.max() <= k_slope,
                      f"-v_c range [{u.min():.3g}, {u.max():.3g}]"))
    worst = 0.0
    for i in range(cs.n + 1):
        s = np.gradient(v[i], h)
        # max_{y >= x} s(y) against max(s(x), 1)
        tail = np.maximum.accumulate(s[::-1])[::-1]
        worst = max(worst, float(np.max(tail - np.maximum(s, 1.0))))
    out.append(_check("est.vx_tail", worst, 1e-6, worst <= 1e-6, "max_{y>=x} v_x(y) - max(v_x(x), 1)"))
    uc = _uc_max(surface)
    cap = cfg.uc_cap if cfg.uc_cap is not None else 10.0 * k_slope
    detail = ""
    if reference is not None:
        ref = _uc_max(reference)
        cap = min(cap, 2.0 * ref)
        detail = f"reference {ref:.4g}"
    out.append(_check("est.uc_bounded", uc, cap, uc <= cap, detail))
    return out


def _uc_max(surface: ValueSurface) -> float:
    u = _u(surface)
    if u.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(u, axis=0)))) / surface.cascade.levels.delta_c


def check_convergence(report: ConvergenceReport, h_last: float) -> list[CheckResult]:
    dv, dx = report.v_diffs, report.x_diffs
    dec = len(dv) >= 2 and report.decreasing
    ratio = max(b / a for a, b in zip(dv, dv[1:])) if len(dv) >= 2 else math.nan
    xs = [r["X_c_bar"] for r in report.runs]
    var = abs(xs[-1] - xs[-2]) if len(xs) >= 2 else math.inf
    return [
        _check("conv.decreasing", ratio, 1.0, dec, f"v {dv} X {dx}"),
        _check("conv.x_cbar", var, 3.0 * h_last, var < 3.0 * h_last, "X(c_bar) change, last refinement"),
    ]


def mc_allowance(surface: ValueSurface, coarse: ValueSurface, x0: float, c0: float, dt: float) -> float:
    """Discretisation allowance ``a(h, dc, dt)`` for an MC-vs-PDE comparison.

    Grid part: change of ``v(x0, c0)`` from the coarse to the fine surface.
    Time part: sampling the maximum every ``dt`` ratchets late by about
    ``0.5826 sigma sqrt(dt)``; by smooth fit the loss is second order in that
    lag, scaled here by the slope bound ``K``.
    """
    p = surface.params
    grid = abs(surface.v(x0, c0) - coarse.v(x0, c0))
    lag = _MAX_LAG * p.sigma * math.sqrt(dt)
    return float(grid + super_solution(p).slope_bound * lag * lag)


def coarse_companion(surface: ValueSurface) -> ValueSurface:
    """Same problem at half the levels and twice the spacing."""
    cs = surface.cascade
    cfg = CascadeConfig(n=max(cs.n // 2, 1), h=2.0 * cs.grid.h, x_max=cs.grid.x_max)
    return assemble_surface(solve_cascade(cs.params, cfg))


def cross_validate_mc(surface: ValueSurface, strategy: Strategy, points, cfg: SimConfig,
                      coarse: ValueSurface | None = None, workers: int = 1) -> list[CheckResult]:
    """MC value of the feedback rule against ``v``, and a panel of constant rules against both."""
    p = surface.params
    coarse = coarse or coarse_companion(surface)
    out = []
    for x0, c0 in points:
        tag = f"@({x0:g},{c0:g})"
        v = surface.v(x0, c0)
        opt = estimate_value(p, strategy, x0, c0, cfg, workers)
        a = mc_allowance(surface, coarse, x0, c0, cfg.dt)
        err = abs(opt.value_mean - v)
        out.append(_check("mc.agree" + tag, err, 3 * opt.value_se + a, err <= 3 * opt.value_se + a,
                          f"mc {opt.value_mean:.6f} se {opt.value_se:.2e} v {v:.6f} a {a:.2e}"))
        rates = sorted({c0, 0.5 * (c0 + p.c_bar), p.c_bar})
        worst_excess = -math.inf
        worst_gap = -math.inf
        for rate in rates:
            alt = estimate_value(p, ConstantRule(rate), x0, c0, cfg, workers)
            worst_excess = max(worst_excess, (alt.value_mean - v) / max(alt.value_se, 1e-300) if alt.value_se else
                               (math.inf if alt.value_mean > v else -math.inf))
            pooled = math.hypot(opt.value_se, alt.value_se)
            worst_gap = max(worst_gap, alt.value_mean - opt.value_mean - 3 * pooled)
        out.append(_check("mc.bounded_by_v" + tag, worst_excess, 3.0, worst_excess <= 3.0,
                          "max (alt - v)/se over constant rules"))
        out.append(_check("mc.optimal" + tag, worst_gap, 0.0, worst_gap <= 0.0,
                          "max alt - opt - 3 pooled se"))
    return out


def verify_surface(surface: ValueSurface, cfg: VerifyConfig = VerifyConfig(),
                   reference: ValueSurface | None = None, extra: list[CheckResult] | None = None) -> VerificationReport:
    checks = check_hjb(surface, cfg) + check_free_boundary(surface, cfg) + check_estimates(surface, cfg, reference)
    checks += extra or []
    worst = checks[0].measured
    if surface.regime is Regime.SIMPLE:
        rng = (0.0, 0.0)
    else:
        sl = boundary_slopes(surface)
        rng = (float(sl.min()), float(sl.max()))
    return VerificationReport(checks, worst, rng)


# --- negative controls -------------------------------------------------------

def _clone(surface: ValueSurface) -> ValueSurface:
    cs = copy.copy(surface.cascade)
    cs.v = cs.v.copy()
    cs.u = cs.u.copy()
    cs.x_free = cs.x_free.copy()
    return replace(surface, cascade=cs, c_knots=surface.c_knots.copy(), x_knots=surface.x_knots.copy())


def _mid_level(s):
    return max(1, s.cascade.n // 2)


def _node_left_of_boundary(s, i):
    return int(math.floor(s.cascade.x_free[i] / s.cascade.grid.h + 1e-9))


def _bump_interior(s):
    out = _clone(s)
    i = _mid_level(s)
    j = max(2, _node_left_of_boundary(s, i) // 2)
    out.cascade.v[i, j] += 1e-3
    return out


def _gap_above(s):
    out = _clone(s)
    i = _mid_level(s)
    j = _node_left_of_boundary(s, i) + 50
    out.cascade.v[i:, j] += 1e-3
    return out


def _collapse_boundary(s):
    out = _clone(s)
    out.x_knots[:] = 0.0
    return out


def _flat_boundary(s):
    out = _clone(s)
    out.x_knots[:] = float(np.mean(s.x_knots))
    return out


def _erase_level_gap(s):
    out = _clone(s)
    i = _mid_level(s)
    out.cascade.v[i] = out.cascade.v[i - 1]
    return out


def _boundary_near_zero(s):
    out = _clone(s)
    out.cascade.x_free[_mid_level(s)] = 2.5 * s.cascade.grid.h
    return out


def _lift_at_contact(s):
    out = _clone(s)
    i = _mid_level(s)
    k = _node_left_of_boundary(s, i)
    out.cascade.v[i, k] += 1e-3 * s.cascade.levels.delta_c
    return out


def _dent_left_of_contact(s):
    out = _clone(s)
    i = _mid_level(s)
    k = _node_left_of_boundary(s, i)
    out.cascade.v[i, k - 1] -= 1e-2 * s.cascade.levels.delta_c
    return out


def _lift_left_of_contact(s):
    out = _clone(s)
    i = _mid_level(s)
    k = _node_left_of_boundary(s, i)
    out.cascade.v[i, k - 1] += 1e-2 * s.cascade.levels.delta_c
    return out


def _ramp_into_contact(s):
    # a kink of u at the contact node: steep one-sided slope, no curvature
    out = _clone(s)
    i = _mid_level(s)
    k = _node_left_of_boundary(s, i)
    out.cascade.v[i, :k] += 1e-3 * s.cascade.levels.delta_c * (k - np.arange(k))
    return out


def _ceiling_breach(s):
    out = _clone(s)
    out.cascade.v[-1, -1] = 1.01 * s.params.value_ceiling
    return out


def _nonzero_origin(s):
    out = _clone(s)
    out.cascade.v[:, 0] = 1e-3
    return out


def _steep_step(s):
    out = _clone(s)
    j = s.cascade.grid.nodes // 2
    out.cascade.v[:, j:] += 2.0 * super_solution(s.params).slope_bound * s.cascade.grid.h
    return out


def _swap_levels(s):
    out = _clone(s)
    i = _mid_level(s)
    out.cascade.v[[i - 1, i]] = out.cascade.v[[i, i - 1]]
    return out


def _late_kink(s):
    out = _clone(s)
    j = int(0.8 * s.cascade.grid.nodes)
    out.cascade.v[:, j:] += 0.01
    return out


def _zigzag_levels(s):
    out = _clone(s)
    j = max(2, _node_left_of_boundary(s, s.cascade.n) // 2)
    out.cascade.v[1::2, j] += 0.05
    return out


NEGATIVE_CONTROLS = {
    "hjb.vi_residual": _bump_interior,
    "hjb.pde_where_vc_negative": _bump_interior,
    "hjb.vc_above_boundary": _gap_above,
    "fb.positive": _collapse_boundary,
    "fb.slope_range": _flat_boundary,
    "fb.vc_below_boundary": _erase_level_gap,
    "fb.vx_at_boundary": _boundary_near_zero,
    "fit.value": _lift_at_contact,
    "fit.slope": _dent_left_of_contact,
    "fit.slope_resolution": _ramp_into_contact,
    "fit.convexity": _lift_left_of_contact,
    "est.v_bounds": _ceiling_breach,
    "est.v_at_zero": _nonzero_origin,
    "est.vx_bounds": _steep_step,
    "est.vc_bounds": _swap_levels,
    "est.vx_tail": _late_kink,
    "est.uc_bounded": _zigzag_levels,
}
