"""Simultaneous confidence bands for contrasts among regression curves."""

__version__ = "0.1.0"
