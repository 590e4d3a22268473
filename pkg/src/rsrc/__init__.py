"""Inverse random-source problems for the 2-D stochastic Helmholtz equation."""

__version__ = "0.1.0"
