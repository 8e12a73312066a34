"""Structured language modeling and A* lattice rescoring."""

__version__ = "0.1.0"
