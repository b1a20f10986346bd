"""Lyapunov exponents of punctured-torus representations, by simulation.

The package estimates the exponential growth rate of matrix words along
several randomization schemes (hyperbolic Brownian paths, geodesic rays,
a stopping-time random walk, uniform lattice draws), and differentiates
the resulting exponent across a one-complex-parameter family of
representations to obtain a positive current on parameter space.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    bifurcation,
    brownian,
    errors,
    fls,
    harness,
    lattice,
    lyapunov,
    moebius,
)
