"""Bounded orbits with prescribed accumulation points on matrix homogeneous spaces."""

__version__ = "0.1.0"
