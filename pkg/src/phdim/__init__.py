"""Simulation and numerical verification tools for piecewise hyperbolic planar maps."""

__version__ = "0.1.0"
