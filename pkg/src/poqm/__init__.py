"""Simulation laboratory for proofs of quantum memory built on BB84 states."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
