"""Randomized multilevel quasi-Monte Carlo on weighted Sobolev spaces."""

__version__ = "0.1.0"
