"""Pseudo-spectral simulation of perturbed shear flow down an inclined plane with a free surface."""

__version__ = "0.1.0"
