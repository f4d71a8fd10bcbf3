"""Desk-scale models of tile-based GPU kernels."""

__version__ = "0.1.0"
