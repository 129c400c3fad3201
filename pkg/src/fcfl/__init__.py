"""Fairness-constrained min-max Pareto optimization for simulated federated learning."""

__version__ = "0.1.0"
