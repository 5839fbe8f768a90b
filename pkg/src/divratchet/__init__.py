"""Optimal dividend ratcheting: obstacle-cascade solver, feedback strategy and Monte Carlo checks."""
