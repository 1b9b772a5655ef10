"""Anomaly detection toolkit for highly imbalanced transaction data."""

__version__ = "0.1.0"
