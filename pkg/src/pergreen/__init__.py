"""Periodic Green functions of oscillating elliptic operators: solvers, homogenization
objects, the shell-grouped lattice decomposition and decay-estimate checks."""

__version__ = "0.1.0"
