"""Geometry-free inertial lift prediction for channel flows of arbitrary cross-section."""

__version__ = "0.1.0"
