"""Faedo-Galerkin simulator for a regularized nonlocal Cahn-Hilliard/Navier-Stokes
system with unmatched densities."""

__version__ = "0.1.0"
