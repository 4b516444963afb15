"""Burr detection on cylindrical parts with polar preprocessing and architecture search."""

__version__ = "0.1.0"
