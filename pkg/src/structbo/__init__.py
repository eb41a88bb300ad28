"""Batched Bayesian optimization over conditional ML-pipeline spaces."""

__version__ = "0.1.0"
