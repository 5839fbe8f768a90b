"""Finite-difference solver for 1D obstacle problems.

Solves ``min{-L_c w - f, w - psi} = 0`` on a uniform grid with Dirichlet ends,
where ``L_c w = sigma^2/2 w'' + (mu - c) w' - r w``.  The discrete operator is
an M-matrix, so both projected SOR and policy (Howard) iteration converge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConsistencyError, ConvergenceError, ParameterError
from .model import ModelParams


@dataclass(frozen=True)
class SpatialGrid:
    h: float
    nodes: int

    def __post_init__(self):
        if not self.h > 0:
            raise ParameterError(f"grid spacing must be positive, got {self.h}")
        if self.nodes < 3:
            raise ParameterError(f"need at least 3 nodes, got {self.nodes}")

    @classmethod
    def covering(cls, x_max: float, h: float) -> "SpatialGrid":
        """Smallest grid with spacing ``h`` reaching at least ``x_max``."""
        nodes = int(math.ceil(x_max / h - 1e-9)) + 1
        return cls(h=h, nodes=max(nodes, 3))

    @property
    def x_max(self) -> float:
        return (self.nodes - 1) * self.h

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(self.nodes)


@dataclass(frozen=True)
class DiscreteOperator:
    """Tridiagonal stencil of ``-L_c``; row ``j`` acts on ``w[j-1], w[j], w[j+1]``.

    Only interior rows ``1..nodes-2`` are meaningful.
    """

    c: float
    grid: SpatialGrid
    params: ModelParams
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    upwind: bool

    def apply(self, w: np.ndarray) -> np.ndarray:
        """``-L_c w`` at the interior nodes."""
        w = np.asarray(w, dtype=float)
        return self.sub[1:-1] * w[:-2] + self.diag[1:-1] * w[1:-1] + self.sup[1:-1] * w[2:]


def build_operator(p: ModelParams, c: float, grid: SpatialGrid) -> DiscreteOperator:
    if not -1e-12 <= c <= p.c_bar + 1e-12:
        raise ParameterError(f"rate {c} outside [0, c_bar={p.c_bar}]")
    a = 0.5 * p.sigma**2
    b = p.mu - c
    h = grid.h
    n = grid.nodes
    upwind = abs(b) * h > 2.0 * a
    if not upwind:
        lo = -a / h**2 + b / (2 * h)
        hi = -a / h**2 - b / (2 * h)
        mid = 2 * a / h**2 + p.r
    elif b >= 0:
        lo, hi, mid = -a / h**2, -a / h**2 - b / h, 2 * a / h**2 + b / h + p.r
    else:
        lo, hi, mid = -a / h**2 + b / h, -a / h**2, 2 * a / h**2 - b / h + p.r
    if lo > 0 or hi > 0 or mid < abs(lo) + abs(hi):
        raise ParameterError("finite-difference stencil is not an M-matrix")
    return DiscreteOperator(
        c=c,
        grid=grid,
        params=p,
        sub=np.full(n, lo),
        diag=np.full(n, mid),
        sup=np.full(n, hi),
        upwind=upwind,
    )


@njit(cache=True)
def _thomas(sub, diag, sup, rhs, left, right):
    # interior unknowns 1..n-2 with Dirichlet ends
    n = rhs.shape[0]
    w = np.empty(n)
    w[0] = left
    w[n - 1] = right
    m = n - 2
    cp = np.empty(m)
    dp = np.empty(m)
    d = rhs[1:n - 1].copy()
    d[0] -= sub[1] * left
    d[m - 1] -= sup[n - 2] * right
    beta = diag[1]
    if beta == 0.0:
        return w, False
    cp[0] = sup[1] / beta
    dp[0] = d[0] / beta
    for k in range(1, m):
        j = k + 1
        beta = diag[j] - sub[j] * cp[k - 1]
        if beta == 0.0:
            return w, False
        cp[k] = sup[j] / beta
        dp[k] = (d[k] - sub[j] * dp[k - 1]) / beta
    w[m] = dp[m - 1]
    for k in range(m - 2, -1, -1):
        w[k + 1] = dp[k] - cp[k] * w[k + 2]
    return w, True


def solve_linear(op: DiscreteOperator, f, left_bc: float, right_bc: float) -> np.ndarray:
    """Solve ``-L_c w = f`` at interior nodes with ``w[0], w[-1]`` prescribed."""
    f = np.broadcast_to(np.asarray(f, dtype=float), (op.grid.nodes,)).copy()
    w, ok = _thomas(op.sub, op.diag, op.sup, f, float(left_bc), float(right_bc))
    if not ok:
        raise ConsistencyError("zero pivot in tridiagonal solve")
    return w


@dataclass(frozen=True)
class ObstacleProblem:
    c: float
    f: np.ndarray
    psi: np.ndarray
    left_bc: float
    right_bc: float

    def validate(self, nodes: int, tol: float = 0.0):
        if self.f.shape != (nodes,) or self.psi.shape != (nodes,):
            raise ParameterError("source and obstacle must have one value per node")
        if self.left_bc < self.psi[0] - tol or self.right_bc < self.psi[-1] - tol:
            raise ParameterError("Dirichlet data lies below the obstacle")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "policy"
    omega: float = 1.5
    tol_update: float = 1e-10
    tol_resid: float = 1e-8
    max_iter: int | None = None

    def __post_init__(self):
        if self.method not in ("psor", "policy"):
            raise ParameterError(f"unknown LCP method {self.method!r}")
        if not 0.0 < self.omega < 2.0:
            raise ParameterError("SOR relaxation must lie in (0, 2)")
        if self.tol_update <= 0 or self.tol_resid <= 0:
            raise ParameterError("tolerances must be positive")

    @classmethod
    def for_model(cls, p: ModelParams, **kw) -> "SolverConfig":
        """Tolerances scaled by the value ceiling ``c_bar / r``."""
        scale = p.value_ceiling if p.c_bar > 0 else 1.0
        kw.setdefault("tol_update", 1e-10 * scale)
        kw.setdefault("tol_resid", 1e-8 * scale)
        return cls(**kw)


@dataclass
class LcpSolution:
    w: np.ndarray
    residual: float
    iterations: int
    active: np.ndarray


def complementarity(op: DiscreteOperator, w, f, psi) -> np.ndarray:
    """Interior values of ``min(-L_c w - f, w - psi)``."""
    pde = op.apply(w) - f[1:-1]
    gap = w[1:-1] - psi[1:-1]
    return np.minimum(pde, gap)


def _roundoff(op, psi, left_bc, right_bc):
    # round-off floor of the stencil applied to data of this size
    size = max(float(np.max(np.abs(psi))), abs(left_bc), abs(right_bc), 1.0)
    return 16.0 * np.finfo(float).eps * float(np.max(op.diag)) * size


def _active_mask(op, w, f, psi, eps=0.0):
    # ties (both branches zero up to eps) count as contact
    pde = op.apply(w) - f[1:-1]
    gap = w[1:-1] - psi[1:-1]
    active = np.empty(w.shape[0], dtype=bool)
    active[1:-1] = gap <= pde + eps
    active[0] = w[0] == psi[0]
    active[-1] = w[-1] == psi[-1]
    return active


@njit(cache=True)
def _psor(sub, diag, sup, f, psi, w, omega, tol_update, max_sweeps):
    n = w.shape[0]
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(1, n - 1):
            gs = (f[j] - sub[j] * w[j - 1] - sup[j] * w[j + 1]) / diag[j]
            new = w[j] + omega * (gs - w[j])
            if new < psi[j]:
                new = psi[j]
            step = abs(new - w[j])
            if step > biggest:
                biggest = step
            w[j] = new
        if biggest < tol_update:
            return sweep, biggest
    return max_sweeps, biggest


def _solve_psor(prob, op, cfg, w0):
    n = op.grid.nodes
    w = np.maximum(prob.psi, w0 if w0 is not None else prob.psi).astype(float)
    w[0], w[-1] = prob.left_bc, prob.right_bc
    cap = cfg.max_iter or 200 * n
    total = 0
    resid = math.inf
    while total < cap:
        sweeps, _ = _psor(op.sub, op.diag, op.sup, prob.f, prob.psi, w, cfg.omega, cfg.tol_update, cap - total)
        total += sweeps
        resid = float(np.max(np.abs(complementarity(op, w, prob.f, prob.psi))))
        if resid < cfg.tol_resid:
            return w, resid, total
    raise ConvergenceError(
        f"projected SOR did not converge in {total} sweeps (residual {resid:.3e})", resid, total
    )


_COARSEST = 129


def _coarse_start(prob, op, cfg):
    """Initial contact set from the same problem on a grid of spacing ``2h``.

    Policy iteration moves a free boundary outward by one node per step, so
    a cold start on a fine grid can take thousands of steps; the prolonged
    coarse contact set is off by a node or two.
    """
    n = op.grid.nodes
    if n < _COARSEST:
        return np.zeros(n, dtype=bool)
    m = (n - 1) // 2 + 1
    coarse_grid = SpatialGrid(h=2 * op.grid.h, nodes=m)
    coarse_op = build_operator(op.params, op.c, coarse_grid)
    idx = 2 * np.arange(m)
    psi = prob.psi[idx]
    right = prob.right_bc if idx[-1] == n - 1 else psi[-1]
    coarse = ObstacleProblem(prob.c, prob.f[idx], psi, prob.left_bc, right)
    sol = _solve_policy(coarse, coarse_op, cfg, None, None)
    coarse_active = _active_mask(coarse_op, sol[0], coarse.f, coarse.psi)
    active = np.zeros(n, dtype=bool)
    active[idx] = coarse_active
    odd = np.arange(1, 2 * (m - 1), 2)
    active[odd] = coarse_active[:-1] & coarse_active[1:]
    return active


def _solve_policy(prob, op, cfg, w0, active0):
    n = op.grid.nodes
    f, psi = prob.f, prob.psi
    if active0 is not None:
        active = np.array(active0, dtype=bool, copy=True)
    elif w0 is not None:
        active = _active_mask(op, np.asarray(w0, dtype=float), f, psi)
    else:
        active = _coarse_start(prob, op, cfg)
    active[0] = active[-1] = False
    cap = cfg.max_iter or n + 10
    # a node whose two branches differ by less than the round-off floor keeps
    # its policy, otherwise near-contact nodes can cycle
    eps = _roundoff(op, psi, prob.left_bc, prob.right_bc)
    resid = math.inf
    for it in range(1, cap + 1):
        sub = np.where(active, 0.0, op.sub)
        diag = np.where(active, 1.0, op.diag)
        sup = np.where(active, 0.0, op.sup)
        rhs = np.where(active, psi, f)
        w, ok = _thomas(sub, diag, sup, rhs, prob.left_bc, prob.right_bc)
        if not ok:
            raise ConsistencyError("zero pivot in policy-iteration solve")
        pde = op.apply(w) - f[1:-1]
        gap = w[1:-1] - psi[1:-1]
        new = active.copy()
        new[1:-1] = np.where(gap < pde - eps, True, np.where(pde < gap - eps, False, active[1:-1]))
        resid = float(np.max(np.abs(np.minimum(pde, gap))))
        if np.array_equal(new, active):
            if resid >= cfg.tol_resid:
                raise ConvergenceError(f"policy iteration stalled at residual {resid:.3e}", resid, it)
            return w, resid, it
        active = new
    raise ConvergenceError(f"policy iteration did not settle in {cap} steps", resid, cap)


def solve_obstacle(prob: ObstacleProblem, op: DiscreteOperator, cfg: SolverConfig | None = None,
                   w0: np.ndarray | None = None, active0: np.ndarray | None = None) -> LcpSolution:
    """Solve the discrete obstacle problem.

    ``w0`` warm-starts either method.  ``active0`` is an initial contact set
    for policy iteration and takes precedence over the one implied by ``w0``.
    """
    cfg = cfg or SolverConfig()
    prob.validate(op.grid.nodes)
    if cfg.method == "psor":
        w, resid, it = _solve_psor(prob, op, cfg, w0)
    else:
        w, resid, it = _solve_policy(prob, op, cfg, w0, active0)
    eps = _roundoff(op, prob.psi, prob.left_bc, prob.right_bc)
    return LcpSolution(w=w, residual=resid, iterations=it, active=_active_mask(op, w, prob.f, prob.psi, eps))
