"""Regime-switching obstacle cascade and the assembled value surface.

Dividend levels ``c_i = c_bar - i * dc`` are solved from the top down.  Level 0
pays ``c_bar`` forever; level ``i`` is an obstacle problem whose obstacle is
level ``i - 1``.  The contact point ``x_i`` of level ``i`` approximates the
ratcheting boundary between ``c_i`` and ``c_{i-1}``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CascadeError, ConsistencyError, ConvergenceError, ParameterError, TruncationError
from .model import ModelParams, Regime, classify_regime, g_value, gamma, super_solution
from .obstacle import (
    ObstacleProblem,
    SolverConfig,
    SpatialGrid,
    build_operator,
    solve_linear,
    solve_obstacle,
)


@dataclass(frozen=True)
class LevelGrid:
    n: int
    c_bar: float

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"need at least one level, got n={self.n}")

    @property
    def delta_c(self) -> float:
        return self.c_bar / self.n

    @property
    def c(self) -> np.ndarray:
        out = self.c_bar - self.delta_c * np.arange(self.n + 1)
        out[-1] = 0.0
        return out


def default_x_max(p: ModelParams) -> float:
    """Truncation point ``4 x_inf + 10 / gamma``; the value is within ``exp(-10)`` of its ceiling."""
    return 4.0 * super_solution(p).x_inf + 10.0 / gamma(p).gamma


@dataclass(frozen=True)
class CascadeConfig:
    n: int = 64
    h: float = 2e-3
    x_max: float | None = None
    solver: SolverConfig | None = None
    tol_gap: float = 1e-10
    grow_threshold: float = 0.9
    max_growth: int = 4
    short_circuit_simple: bool = True
    check: bool = True
    tol_invariant: float = 1e-8

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if not self.h > 0:
            raise ParameterError("h must be positive")
        if self.x_max is not None and not self.x_max > 2 * self.h:
            raise ParameterError("x_max must exceed two grid spacings")
        if self.tol_gap <= 0 or self.tol_invariant <= 0:
            raise ParameterError("tolerances must be positive")


@dataclass
class CascadeSolution:
    params: ModelParams
    grid: SpatialGrid
    levels: LevelGrid
    v: np.ndarray
    u: np.ndarray
    x_free: np.ndarray
    regime: Regime
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    elapsed: float = 0.0

    @property
    def n(self) -> int:
        return self.levels.n

    def u_level(self, i: int) -> np.ndarray:
        """``(v_i - v_{i-1}) / dc`` for ``i >= 1``."""
        if i < 1:
            raise IndexError("u is defined for levels i >= 1")
        return self.u[i]


def extract_free_boundary(v_i, v_prev, grid: SpatialGrid, tol_gap: float, scale: float = 1.0) -> float:
    """Left end of the trailing region where ``v_i - v_prev < tol_gap * scale``.

    Near a smooth-fit contact the gap closes quadratically, so the sub-grid
    position is found by linear extrapolation of ``sqrt(gap)`` from the last
    two gap nodes, clipped to the cell that contains the contact.  A lone gap
    node falls back to linear interpolation of the gap itself.
    """
    gap = np.asarray(v_i, dtype=float) - np.asarray(v_prev, dtype=float)
    thr = tol_gap * scale
    above = np.nonzero(gap >= thr)[0]
    if above.size == 0:
        return 0.0
    k = int(above[-1])
    if k >= grid.nodes - 1:
        raise TruncationError(f"gap still open at x_max={grid.x_max:g}")
    x_k = k * grid.h
    if k == 0 or gap[k - 1] < thr:
        drop = gap[k] - gap[k + 1]
        return x_k + grid.h * min((gap[k] - thr) / drop, 1.0) if drop > 0 else x_k + grid.h
    s_k = math.sqrt(gap[k] - thr)
    s_prev = math.sqrt(gap[k - 1] - thr)
    if s_prev <= s_k:
        return x_k + grid.h
    root = x_k + grid.h * s_k / (s_prev - s_k)
    return min(max(root, x_k), x_k + grid.h)


def _g_level(p, grid):
    gx = g_value(p, grid.x)
    op = build_operator(p, p.c_bar, grid)
    v0 = solve_linear(op, p.c_bar, 0.0, gx[-1])
    return v0, gx


def g_discretisation_tol(p: ModelParams, h: float) -> float:
    """Allowance for the O(h^2) gap between the discrete level-0 solve and ``g``."""
    gm = gamma(p).gamma
    return p.value_ceiling * gm * gm * h * h + 1e-12


def _run_cascade(p, cfg, grid, solver):
    levels = LevelGrid(cfg.n, p.c_bar)
    n, nodes = cfg.n, grid.nodes
    v = np.empty((n + 1, nodes))
    v[0], gx = _g_level(p, grid)
    x_free = np.empty(n + 1)
    x_free[0] = math.inf
    resid = np.zeros(n + 1)
    iters = np.zeros(n + 1, dtype=int)
    active = None
    c = levels.c
    for i in range(1, n + 1):
        op = build_operator(p, c[i], grid)
        prob = ObstacleProblem(c[i], np.full(nodes, c[i]), v[i - 1], 0.0, gx[-1])
        try:
            sol = solve_obstacle(prob, op, solver, active0=active)
        except ConvergenceError as exc:
            raise CascadeError(f"level {i} (c={c[i]:.6g}): {exc}", i, exc.residual, exc.iterations) from exc
        v[i] = sol.w
        active = sol.active
        resid[i] = sol.residual
        iters[i] = sol.iterations
        x_free[i] = extract_free_boundary(v[i], v[i - 1], grid, cfg.tol_gap, p.value_ceiling)
    u = np.empty_like(v)
    u[1:] = (v[1:] - v[:-1]) / levels.delta_c
    # level 0 has no level above it; reuse the one-sided quotient
    u[0] = u[1]
    return levels, v, u, x_free, resid, iters


def solve_cascade(p: ModelParams, cfg: CascadeConfig | None = None) -> CascadeSolution:
    """Solve all ``n + 1`` levels, growing the domain if a boundary nears ``x_max``.

    In the simple regime every level equals level 0 and, by default, the
    obstacle solves are skipped; ``x_i = 0`` by convention.
    """
    cfg = cfg or CascadeConfig()
    if p.c_bar == 0:
        raise ParameterError("c_bar = 0 is degenerate: no dividends, value identically 0")
    regime = classify_regime(p)
    solver = cfg.solver or SolverConfig.for_model(p)
    x_max = cfg.x_max or default_x_max(p)
    t0 = time.perf_counter()
    if regime is Regime.SIMPLE and cfg.short_circuit_simple:
        grid = SpatialGrid.covering(x_max, cfg.h)
        v0, _ = _g_level(p, grid)
        levels = LevelGrid(cfg.n, p.c_bar)
        cs = CascadeSolution(
            params=p,
            grid=grid,
            levels=levels,
            v=np.tile(v0, (cfg.n + 1, 1)),
            u=np.zeros((cfg.n + 1, grid.nodes)),
            x_free=np.r_[math.inf, np.zeros(cfg.n)],
            regime=regime,
            residuals=np.zeros(cfg.n + 1),
            iterations=np.zeros(cfg.n + 1, dtype=int),
        )
    else:
        for attempt in range(cfg.max_growth + 1):
            grid = SpatialGrid.covering(x_max, cfg.h)
            try:
                levels, v, u, x_free, resid, iters = _run_cascade(p, cfg, grid, solver)
            except TruncationError:
                x_max *= 2.0
                continue
            if np.max(x_free[1:]) <= cfg.grow_threshold * grid.x_max:
                break
            x_max *= 2.0
        else:
            raise TruncationError(f"free boundary still beyond {cfg.grow_threshold:g} x_max after growth")
        if regime is Regime.SIMPLE:
            x_free[1:] = np.where(x_free[1:] <= grid.h, 0.0, x_free[1:])
        cs = CascadeSolution(p, grid, levels, v, u, x_free, regime, resid, iters)
    cs.elapsed = time.perf_counter() - t0
    if cfg.check:
        problems = cascade_violations(cs, cfg.tol_invariant * p.value_ceiling)
        if problems:
            raise ConsistencyError("cascade invariants violated (grid too coarse?): " + "; ".join(problems))
    return cs


def discrete_slope(w: np.ndarray, h: float) -> np.ndarray:
    return np.gradient(w, h)


def cascade_violations(cs: CascadeSolution, tol: float) -> list[str]:
    """Human-readable list of violated structural invariants; empty if all hold."""
    p, grid, v = cs.params, cs.grid, cs.v
    h = grid.h
    out = []
    g_err = float(np.max(np.abs(v[0] - g_value(p, grid.x))))
    if g_err > g_discretisation_tol(p, h):
        out.append(f"level 0 differs from g by {g_err:.3e}")
    drop = float(np.min(v[1:] - v[:-1])) if cs.n >= 1 else 0.0
    if drop < -tol:
        out.append(f"levels not ordered (min v_i - v_(i-1) = {drop:.3e})")
    if v.min() < -tol or v.max() > p.value_ceiling + tol:
        out.append(f"values outside [0, c_bar/r]: [{v.min():.6g}, {v.max():.6g}]")
    fwd = float(np.min(np.diff(v, axis=1)))
    if fwd < -tol:
        out.append(f"value decreasing in x (min forward difference {fwd:.3e})")
    if cs.regime is Regime.SIMPLE:
        if np.any(cs.x_free[1:] != 0.0):
            out.append("simple regime with a non-zero free boundary")
        return out
    xs = cs.x_free[1:]
    if np.any(xs <= 0) or np.any(xs >= grid.x_max):
        out.append("free boundary outside (0, x_max)")
    if cs.n >= 2:
        jump = float(np.max(xs[1:] - xs[:-1]))
        if jump > h + 1e-12:
            out.append(f"free boundary increases with level by {jump:.3e}")
    for i in range(1, cs.n + 1):
        s = float(np.interp(cs.x_free[i], grid.x, discrete_slope(v[i - 1], h)))
        if not s < 1.0:
            out.append(f"slope of level {i - 1} at x_{i} is {s:.6f} >= 1")
            break
    return out


@dataclass
class ValueSurface:
    """Bilinear interpolant of the cascade plus the boundary curve and its inverse."""

    cascade: CascadeSolution
    c_knots: np.ndarray
    x_knots: np.ndarray

    @property
    def params(self) -> ModelParams:
        return self.cascade.params

    @property
    def regime(self) -> Regime:
        return self.cascade.regime

    @property
    def grid(self) -> SpatialGrid:
        return self.cascade.grid

    def _bilinear(self, table, x, c):
        cs = self.cascade
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        x, c = np.broadcast_arrays(x, c)
        if np.any(x < 0) or np.any(c < -1e-12) or np.any(c > cs.params.c_bar + 1e-12):
            raise ParameterError("evaluation point outside [0, inf) x [0, c_bar]")
        xg = cs.grid.x
        # level index as a real number: c_bar -> 0, 0 -> n
        s = np.clip((cs.params.c_bar - c) / cs.levels.delta_c, 0.0, cs.n)
        lo = np.minimum(np.floor(s).astype(int), cs.n - 1)
        wt = s - lo
        xc = np.minimum(x, xg[-1])
        flat = np.empty(x.shape)
        for idx in np.ndindex(x.shape):
            a = np.interp(xc[idx], xg, table[lo[idx]])
            b = np.interp(xc[idx], xg, table[lo[idx] + 1])
            flat[idx] = (1 - wt[idx]) * a + wt[idx] * b
        return float(flat) if flat.ndim == 0 else flat

    def v(self, x, c):
        """Value at surplus ``x`` and current rate ``c``; beyond the grid the value is ``g``."""
        out = self._bilinear(self.cascade.v, x, c)
        x = np.asarray(x, dtype=float)
        if np.any(x > self.grid.x_max):
            beyond = g_value(self.params, np.maximum(x, 0.0))
            out = np.where(x > self.grid.x_max, beyond, out)
            out = float(out) if np.ndim(out) == 0 else out
        return out

    def u(self, x, c):
        return self._bilinear(self.cascade.u, x, c)

    def boundary(self, c):
        """Ratcheting threshold ``X(c)``; ``0`` everywhere in the simple regime."""
        out = np.interp(np.asarray(c, dtype=float), self.c_knots, self.x_knots)
        return float(out) if np.ndim(out) == 0 else out

    def boundary_inverse(self, x):
        """Smallest rate ``c`` with ``X(c) >= x``, clipped to ``[0, c_bar]``."""
        return boundary_inverse(self.c_knots, self.x_knots, x)


def boundary_inverse(c_knots, x_knots, x):
    xk = np.asarray(x_knots, dtype=float)
    ck = np.asarray(c_knots, dtype=float)
    xq = np.asarray(x, dtype=float)
    k = np.searchsorted(xk, xq, side="left")
    k = np.clip(k, 1, xk.size - 1)
    x0, x1 = xk[k - 1], xk[k]
    c0, c1 = ck[k - 1], ck[k]
    span = x1 - x0
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(span > 0, (xq - x0) / np.where(span > 0, span, 1.0), 0.0)
    out = np.where(span > 0, c0 + np.clip(t, 0.0, 1.0) * (c1 - c0), c0)
    # exact hits on a flat run resolve to its left end
    hit = np.searchsorted(xk, xq, side="left")
    on_knot = (hit < xk.size) & (xk[np.minimum(hit, xk.size - 1)] == xq)
    out = np.where(on_knot, ck[np.minimum(hit, xk.size - 1)], out)
    out = np.where(xq <= xk[0], ck[0], np.where(xq >= xk[-1], ck[-1], out))
    return float(out) if out.ndim == 0 else out


def boundary_knots(cs: CascadeSolution, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Knots of ``X(c)`` in increasing ``c``.

    ``x_i`` is placed at the midpoint ``c_i + dc/2`` of the rate interval it
    separates; the end values at ``c = 0`` and ``c = c_bar`` are linear
    extrapolations of the two nearest knots.
    """
    p = cs.params
    n, dc = cs.n, cs.levels.delta_c
    if cs.regime is Regime.SIMPLE:
        return np.array([0.0, p.c_bar]), np.zeros(2)
    tol = cs.grid.h if tol is None else tol
    mids = cs.levels.c[1:] + 0.5 * dc
    xs = cs.x_free[1:]
    c_in, x_in = mids[::-1], xs[::-1]
    if n == 1:
        c_k = np.array([0.0, p.c_bar])
        x_k = np.array([x_in[0], x_in[0]])
    else:
        lo = x_in[0] - (x_in[1] - x_in[0]) * 0.5
        hi = x_in[-1] + (x_in[-1] - x_in[-2]) * 0.5
        c_k = np.r_[0.0, c_in, p.c_bar]
        x_k = np.r_[lo, x_in, hi]
    dips = np.maximum.accumulate(x_k) - x_k
    if np.max(dips) > tol:
        raise ConsistencyError(f"free boundary decreases in c by {np.max(dips):.3e} (> {tol:.3e})")
    return c_k, np.maximum.accumulate(x_k)


def assemble_surface(cs: CascadeSolution) -> ValueSurface:
    c_k, x_k = boundary_knots(cs)
    return ValueSurface(cascade=cs, c_knots=c_k, x_knots=x_k)


@dataclass(frozen=True)
class RefineConfig:
    n0: int = 32
    h0: float = 4e-3
    max_steps: int = 3
    tol_conv: float = 1e-4
    tol_boundary: float = 5e-3
    x_max: float | None = None
    cascade: CascadeConfig = field(default_factory=CascadeConfig)


@dataclass
class ConvergenceReport:
    runs: list[dict]
    v_diffs: list[float]
    x_diffs: list[float]
    converged: bool
    decreasing: bool

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "v_diffs": self.v_diffs,
            "x_diffs": self.x_diffs,
            "converged": self.converged,
            "decreasing": self.decreasing,
        }


def cauchy_differences(coarse: ValueSurface, fine: ValueSurface) -> tuple[float, float]:
    """Sup-norm change of ``v`` on shared nodes/levels and of ``X`` on the coarse knots."""
    cc, cf = coarse.cascade, fine.cascade
    rx = int(round(cc.grid.h / cf.grid.h))
    rc = cf.n // cc.n
    m = min(cc.grid.nodes, (cf.grid.nodes - 1) // rx + 1)
    dv = float(np.max(np.abs(cf.v[::rc, ::rx][:, :m] - cc.v[:, :m])))
    dx = float(np.max(np.abs(fine.boundary(coarse.c_knots) - coarse.x_knots)))
    return dv, dx


def refine_until_converged(p: ModelParams, cfg: RefineConfig | None = None):
    """Double ``n`` and halve ``h`` until successive surfaces agree.

    Returns the finest surface and a ``ConvergenceReport``; hitting
    ``max_steps`` flags the report unconverged rather than raising.
    """
    cfg = cfg or RefineConfig()
    x_max = cfg.x_max or default_x_max(p)
    # a multiple of the coarse spacing keeps every grid nested
    x_max = math.ceil(x_max / cfg.h0) * cfg.h0
    runs, dvs, dxs = [], [], []
    prev = None
    surface = None
    converged = False
    n, h = cfg.n0, cfg.h0
    for step in range(cfg.max_steps):
        ccfg = replace(cfg.cascade, n=n, h=h, x_max=x_max)
        cs = solve_cascade(p, ccfg)
        surface = assemble_surface(cs)
        x_max = cs.grid.x_max
        run = {"n": n, "h": h, "x_max": x_max, "elapsed": cs.elapsed,
               "X_c_bar": float(surface.boundary(p.c_bar)), "X_0": float(surface.boundary(0.0))}
        if prev is not None:
            dv, dx = cauchy_differences(prev, surface)
            dvs.append(dv)
            dxs.append(dx)
            run.update(v_diff=dv, x_diff=dx)
            if dv < cfg.tol_conv and dx < cfg.tol_boundary:
                converged = True
                runs.append(run)
                break
        runs.append(run)
        prev = surface
        n, h = 2 * n, h / 2
    decreasing = all(b < a for a, b in zip(dvs, dvs[1:])) and all(b < a for a, b in zip(dxs, dxs[1:]))
    return surface, ConvergenceReport(runs, dvs, dxs, converged, decreasing)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def surface_csv(surface: ValueSurface) -> str:
    """CSV with columns ``x, c, v, u`` for every grid node at every level."""
    cs = surface.cascade
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "c", "v", "u"])
    xs = cs.grid.x
    for i, c in enumerate(cs.levels.c):
        for j in range(cs.grid.nodes):
            w.writerow([_fmt(xs[j]), _fmt(c), _fmt(cs.v[i, j]), _fmt(cs.u[i, j])])
    return buf.getvalue()


def boundary_csv(surface: ValueSurface) -> str:
    """CSV with columns ``c, X``: one row per level ``c_i`` (``i = 0..n``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["c", "X"])
    for c in surface.cascade.levels.c:
        w.writerow([_fmt(c), _fmt(surface.boundary(c))])
    return buf.getvalue()


def read_surface_csv(text: str, p: ModelParams, tol_gap: float = 1e-10) -> CascadeSolution:
    """Rebuild a ``CascadeSolution`` from ``surface_csv`` output."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["x", "c", "v", "u"]:
        raise ParameterError("surface CSV must start with header x,c,v,u")
    data = np.array(rows[1:], dtype=float)
    cs_vals = np.unique(data[:, 1])[::-1]
    n = cs_vals.size - 1
    nodes = data.shape[0] // (n + 1)
    if nodes * (n + 1) != data.shape[0] or nodes < 3:
        raise ParameterError("surface CSV is not a full level x node table")
    xs = data[:nodes, 0]
    h = float(xs[1] - xs[0])
    grid = SpatialGrid(h=h, nodes=nodes)
    if not np.allclose(xs, grid.x, rtol=0, atol=1e-9 * max(1.0, grid.x_max)):
        raise ParameterError("surface CSV grid is not uniform")
    v = data[:, 2].reshape(n + 1, nodes)
    u = data[:, 3].reshape(n + 1, nodes)
    if abs(cs_vals[0] - p.c_bar) > 1e-9 or abs(cs_vals[-1]) > 1e-12:
        raise ParameterError("surface CSV levels do not span [0, c_bar]")
    levels = LevelGrid(n, p.c_bar)
    regime = classify_regime(p)
    x_free = np.empty(n + 1)
    x_free[0] = math.inf
    for i in range(1, n + 1):
        x_free[i] = extract_free_boundary(v[i], v[i - 1], grid, tol_gap, p.value_ceiling)
    if regime is Regime.SIMPLE:
        x_free[1:] = np.where(x_free[1:] <= grid.h, 0.0, x_free[1:])
    return CascadeSolution(p, grid, levels, v, u, x_free, regime)


def read_boundary_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["c", "X"]:
        raise ParameterError("boundary CSV must start with header c,X")
    data = np.array(rows[1:], dtype=float)
    order = np.argsort(data[:, 0], kind="stable")
    return data[order, 0], data[order, 1]
