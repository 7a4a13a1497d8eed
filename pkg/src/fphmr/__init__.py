"""Hierarchical model reduction for the 1D Fokker-Planck equation.

Velocity bases (Legendre or greedily selected snapshots) turn the kinetic
equation into a linear hyperbolic moment system, solved with upwind finite
volumes and compared against a full (t, x, v) reference solution.
"""

__version__ = "0.1.0"
