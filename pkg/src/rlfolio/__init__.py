"""Deterministic walk-forward research engine for RL portfolio allocation."""

__version__ = "0.1.0"
