"""Continuous-exposure causal inference: GPS estimation, matched and weighted
pseudo-populations, covariate balance tuning and exposure-response estimation."""

__version__ = "0.1.0"
