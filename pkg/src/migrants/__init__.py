"""Simulation and numerical checks for a spatial immigration-emigration model
with attraction and competition."""

__version__ = "0.1.0"
