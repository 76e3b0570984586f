"""Disentangled, intervention-regularised graph attention for dynamic graphs under distribution shift."""

__version__ = "0.1.0"
