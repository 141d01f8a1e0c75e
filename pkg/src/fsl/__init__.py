"""Numerical laboratory for Dirichlet eigenvalues of the fractional Laplacian."""

__version__ = "0.1.0"
