"""Bayes-mixture redundancy for parametric sequential sources."""

__version__ = "0.1.0"
