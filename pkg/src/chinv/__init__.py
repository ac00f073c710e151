"""Continuously Hutchinson invariant sets of operators T = Q d/dz + P."""

__version__ = "0.1.0"
