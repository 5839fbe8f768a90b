"""Feedback ratcheting rule built from the free boundary.

Starting from rate ``c_init``, the rate is ``c_init`` while the running
maximum of the surplus stays at or below ``X(c_init)``, then follows
``X^{-1}`` of the running maximum, and is capped at ``c_bar`` once the maximum
reaches ``X(c_bar)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cascade import ValueSurface, boundary_inverse
from .errors import ParameterError
from .model import Regime


@dataclass(frozen=True)
class Strategy:
    c_init: float
    c_bar: float
    regime: Regime
    c_knots: np.ndarray
    x_knots: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.c_init <= self.c_bar:
            raise ParameterError(f"c_init={self.c_init} outside [0, c_bar={self.c_bar}]")
        ck = np.asarray(self.c_knots, dtype=float)
        xk = np.asarray(self.x_knots, dtype=float)
        if ck.shape != xk.shape or ck.size < 2:
            raise ParameterError("boundary needs at least two (c, X) knots")
        if np.any(np.diff(ck) <= 0) or np.any(np.diff(xk) < 0):
            raise ParameterError("boundary knots must be increasing in c and non-decreasing in X")
        object.__setattr__(self, "c_knots", ck)
        object.__setattr__(self, "x_knots", xk)

    @classmethod
    def from_surface(cls, surface: ValueSurface, c_init: float) -> "Strategy":
        return cls(c_init, surface.params.c_bar, surface.regime, surface.c_knots, surface.x_knots)

    def boundary(self, c):
        return np.interp(c, self.c_knots, self.x_knots)

    @property
    def start_threshold(self) -> float:
        return float(self.boundary(self.c_init))

    @property
    def cap_threshold(self) -> float:
        return float(self.x_knots[-1])

    def with_start(self, c_init: float) -> "Strategy":
        return Strategy(c_init, self.c_bar, self.regime, self.c_knots, self.x_knots)

    def to_json(self) -> str:
        return json.dumps(
            {
                "c_init": self.c_init,
                "c_bar": self.c_bar,
                "regime": self.regime.value,
                "boundary": {"c": self.c_knots.tolist(), "X": self.x_knots.tolist()},
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Strategy":
        try:
            d = json.loads(text)
            return cls(
                float(d["c_init"]),
                float(d["c_bar"]),
                Regime(d["regime"]),
                np.asarray(d["boundary"]["c"], dtype=float),
                np.asarray(d["boundary"]["X"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed strategy JSON: {exc}") from exc


def feedback_rate(s: Strategy, x):
    """Rate prescribed when the running maximum of the surplus is ``x``."""
    xq = np.asarray(x, dtype=float)
    if np.any(xq < 0):
        raise ParameterError("running maximum must be non-negative")
    if s.regime is Regime.SIMPLE:
        out = np.full(xq.shape, s.c_bar)
    else:
        lo, hi = s.start_threshold, s.cap_threshold
        inner = boundary_inverse(s.c_knots, s.x_knots, xq)
        out = np.where(xq <= lo, s.c_init, np.where(xq >= hi, s.c_bar, np.maximum(inner, s.c_init)))
    return float(out) if out.ndim == 0 else out


def ratchet_update(s: Strategy, current_rate: float, new_max: float) -> float:
    """Never lowers the rate: ``max(current_rate, feedback_rate(new_max))``."""
    return max(current_rate, feedback_rate(s, new_max))
