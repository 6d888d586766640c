"""Coined quantum walks on the hexagonal lattice with random phase disorder."""

__version__ = "0.1.0"
