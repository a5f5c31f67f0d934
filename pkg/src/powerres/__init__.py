"""Residual and power-skip MLPs for scattered-data interpolation and inverse Burgers fits."""

__version__ = "0.1.0"
