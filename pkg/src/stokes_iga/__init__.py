"""Divergence-conforming B-spline discretization of Stokes flow and block preconditioned MINRES."""

__version__ = "0.1.0"
