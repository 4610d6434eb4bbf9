"""Numerical laboratory for renormalized random magnetic Schrodinger operators in 2D."""

__version__ = "0.1.0"
