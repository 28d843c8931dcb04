"""Crash-consistent persistent indexes over a simulated persistent-memory pool."""

__version__ = "0.1.0"
