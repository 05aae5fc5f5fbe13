"""Ergodic theory laboratory for polynomial correspondences on the Riemann sphere."""

__version__ = "0.1.0"
