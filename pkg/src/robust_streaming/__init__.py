"""Adversarially robust streaming estimates via differentially private aggregation."""

__version__ = "0.1.0"
