"""Colouring rules on Cayley balls: constructive solvers and exact density audits."""

__version__ = "0.1.0"
