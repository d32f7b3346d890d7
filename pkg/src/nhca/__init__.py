"""Numerical machinery for local testing conditions and compactness
diagnostics of Calderon-Zygmund operators on non-doubling atomic measures."""

__version__ = "0.1.0"
