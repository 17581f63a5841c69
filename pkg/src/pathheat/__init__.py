"""Solvers and checks for the path-dependent heat equation on C([-T, 0])."""

__version__ = "0.1.0"
