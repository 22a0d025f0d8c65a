"""Numerical laboratory for waves with time-periodic metrics and moving obstacles."""

__version__ = "0.1.0"
