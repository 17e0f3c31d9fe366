"""Reliability-constrained Bayesian design of a thermal-protection film."""

__version__ = "0.1.0"
