"""Generalized Abreu operator toolkit on Delzant polytopes."""

__version__ = "0.1.0"
