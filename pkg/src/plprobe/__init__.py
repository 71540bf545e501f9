"""Numerical toolkit for boundary determination of p-Laplace conductivities.

Builds localized oscillatory boundary probes, solves the weighted
p-Laplace Dirichlet problem by regularized convex minimization, evaluates
the nonlinear Dirichlet-to-Neumann pairing, and demonstrates convergence
of probe self-pairings to the conductivity value at a boundary point.
"""

__version__ = "0.1.0"
