"""Hybrid fiducial mark tracking: strip following plus dot-pattern boards."""

__version__ = "0.1.0"
