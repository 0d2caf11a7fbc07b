"""Toolkit for transient one-dimensional random walks in random environment.

Exact finite-interval computations (exit probabilities, hitting-time
tails, spectral-gap sandwiches), time-indexed valley decompositions of
the random potential, reproducible trajectory simulation, and Monte
Carlo estimation of slowdown / backtracking / speedup exponents.
"""

__version__ = "0.1.0"
