"""Incremental variational solver for finite-strain elastoplasticity on SL(3)."""

__version__ = "0.1.0"
