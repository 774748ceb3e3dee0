"""Scoped re-scheduling experiments on generated railway grids."""

__version__ = "0.1.0"
