"""Spectral simulator of free-boundary incompressible Euler flow with surface tension on the unit disk."""

__version__ = "0.1.0"
