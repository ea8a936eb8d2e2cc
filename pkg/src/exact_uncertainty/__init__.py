"""Numerical toolkit for the exact uncertainty relation and its dynamics."""

__version__ = "0.1.0"
