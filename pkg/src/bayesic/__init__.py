"""Probabilistic anomaly detection for agent staypoint sequences."""

__version__ = "0.1.0"
