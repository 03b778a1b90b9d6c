"""Numerical laboratory for maximum-modulus estimates of the heat equation with singular drift."""

__version__ = "0.1.0"
