"""Robust maximum likelihood for exponential-family GLMs under parametric KL ambiguity."""

__version__ = "0.1.0"
