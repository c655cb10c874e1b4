"""Partial refrigeration of multimode mechanical resonators by cold-damping feedback."""

__version__ = "0.1.0"
