"""Gaussian directional encoding toolkit."""

__version__ = "0.1.0"
