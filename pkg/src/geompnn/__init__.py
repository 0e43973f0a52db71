"""Geometry-aware message-passing surrogate for steady 2-D airfoil flow fields."""

__version__ = "0.1.0"
