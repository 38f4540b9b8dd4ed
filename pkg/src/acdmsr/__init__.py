"""Desk-scale conditional diffusion super-resolution."""

__version__ = "0.1.0"
