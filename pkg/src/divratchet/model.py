"""Model constants and every closed-form quantity of the ratcheting problem.

The surplus follows ``dX = (mu - C) dt + sigma dW`` with a non-decreasing
dividend rate ``C`` capped at ``c_bar``; payouts are discounted at ``r``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class ModelParams:
    mu: float
    sigma: float
    r: float
    c_bar: float

    def __post_init__(self):
        for name in ("mu", "sigma", "r", "c_bar"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if self.mu <= 0 or self.sigma <= 0 or self.r <= 0:
            raise ParameterError(
                f"need mu, sigma, r > 0 (got mu={self.mu}, sigma={self.sigma}, r={self.r})"
            )
        if not 0.0 <= self.c_bar <= self.mu:
            raise ParameterError(f"need 0 <= c_bar <= mu, got c_bar={self.c_bar}, mu={self.mu}")

    @property
    def value_ceiling(self) -> float:
        """Upper bound ``c_bar / r`` of the value function."""
        return self.c_bar / self.r

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "r": self.r, "c_bar": self.c_bar}


REFERENCE_PARAMS = ModelParams(mu=0.4, sigma=0.4, r=0.05, c_bar=0.3)


class Regime(enum.Enum):
    SIMPLE = "simple"
    COMPLICATED = "complicated"


def classify_regime(p: ModelParams) -> Regime:
    """Simple iff ``2 mu c_bar <= sigma^2 r`` (ties are simple)."""
    if 2.0 * p.mu * p.c_bar <= p.sigma**2 * p.r:
        return Regime.SIMPLE
    return Regime.COMPLICATED


def _stable_roots(a: float, b: float, c: float) -> tuple[float, float]:
    # roots of a t^2 + b t + c = 0 without cancellation; assumes real roots
    disc = math.sqrt(b * b - 4.0 * a * c)
    q = -0.5 * (b + math.copysign(disc, b))
    r1, r2 = q / a, c / q
    return (r1, r2) if r1 <= r2 else (r2, r1)


@dataclass(frozen=True)
class BoundaryClosedForm:
    gamma: float
    v_ceiling: float


def gamma(p: ModelParams) -> BoundaryClosedForm:
    """Positive root of ``-sigma^2 g^2 / 2 + (mu - c_bar) g + r = 0``.

    ``mu - c_bar >= 0`` on the admissible domain, so the textbook formula
    adds two non-negative terms and is already cancellation free.
    """
    drift = p.mu - p.c_bar
    s2 = p.sigma**2
    g = (drift + math.sqrt(drift * drift + 2.0 * s2 * p.r)) / s2
    return BoundaryClosedForm(gamma=g, v_ceiling=p.value_ceiling)


def gamma_residual(p: ModelParams, g: float) -> float:
    """Relative residual of the quadratic defining ``gamma``."""
    drift = p.mu - p.c_bar
    terms = (0.5 * p.sigma**2 * g * g, drift * g, p.r)
    return abs(-terms[0] + terms[1] + terms[2]) / max(terms)


def g_value(p: ModelParams, x):
    """Value of paying ``c_bar`` forever: ``(c_bar/r)(1 - exp(-gamma x))``.

    Accepts scalars or arrays; negative surplus raises ``ParameterError``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ParameterError("g is defined for x >= 0 only")
    out = p.value_ceiling * -np.expm1(-gamma(p).gamma * xa)
    return float(out) if out.ndim == 0 else out


def g_prime(p: ModelParams, x):
    gm = gamma(p).gamma
    out = p.value_ceiling * gm * np.exp(-gm * np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def g_second(p: ModelParams, x):
    gm = gamma(p).gamma
    out = -p.value_ceiling * gm * gm * np.exp(-gm * np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SuperSolution:
    """Two-piece super solution used to bound slopes of every cascade level.

    ``K1 (exp(theta2 x) - exp(theta1 x))`` below ``x_inf`` and ``k2 + x``
    above it.  ``k2`` is fixed by continuity of the value at ``x_inf``.
    """

    theta1: float
    theta2: float
    x_inf: float
    k1: float
    k2: float

    @property
    def slope_at_zero(self) -> float:
        return self.k1 * (self.theta2 - self.theta1)

    @property
    def slope_bound(self) -> float:
        """Uniform bound ``max(vbar'(0), 1)`` on discrete slopes of the value."""
        return max(self.slope_at_zero, 1.0)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        inner = self.k1 * (np.exp(self.theta2 * x) - np.exp(self.theta1 * x))
        out = np.where(x < self.x_inf, inner, self.k2 + x)
        return float(out) if out.ndim == 0 else out

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        inner = self.k1 * (self.theta2 * np.exp(self.theta2 * x) - self.theta1 * np.exp(self.theta1 * x))
        out = np.where(x < self.x_inf, inner, 1.0)
        return float(out) if out.ndim == 0 else out


def super_solution(p: ModelParams) -> SuperSolution:
    theta1, theta2 = _stable_roots(-0.5 * p.sigma**2, -p.mu, p.r)
    x_inf = 2.0 / (theta2 - theta1) * math.log(abs(theta1 / theta2))
    e1, e2 = math.exp(theta1 * x_inf), math.exp(theta2 * x_inf)
    k1 = 1.0 / (theta2 * e2 - theta1 * e1)
    k2 = k1 * (e2 - e1) - x_inf
    return SuperSolution(theta1=theta1, theta2=theta2, x_inf=x_inf, k1=k1, k2=k2)


def theta_residuals(p: ModelParams, s: SuperSolution) -> tuple[float, float]:
    out = []
    for t in (s.theta1, s.theta2):
        terms = (0.5 * p.sigma**2 * t * t, p.mu * t, p.r)
        out.append(abs(-terms[0] - terms[1] + terms[2]) / max(abs(v) for v in terms))
    return out[0], out[1]


def ode_oracle_u_top(p: ModelParams, x):
    """Power-growth solution of ``-L_{c_bar} u = g' - 1`` with ``u(0) = 0``.

    Only an analytic check for the linear solver; in the complicated regime
    it goes negative and is therefore not the true ``-v_c`` at ``c_bar``.
    """
    gm = gamma(p).gamma
    x = np.asarray(x, dtype=float)
    denom = p.r * (p.sigma**2 * gm - p.mu + p.c_bar)
    e = np.exp(-gm * x)
    out = (e - 1.0) / p.r + gm * p.c_bar / denom * x * e
    return float(out) if out.ndim == 0 else out
