"""Physically parametrized subspace identification of mechanical systems."""

__version__ = "0.1.0"
