"""Certified inner-approximations of finite-horizon backward reachable sets
for polynomial control systems, with polynomial state-feedback synthesis."""

__version__ = "0.1.0"

from .poly import Polynomial, VarSet, monomial_basis  # noqa: F401
