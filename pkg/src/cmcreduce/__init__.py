"""Lyapunov-Schmidt reduction for outlying constant-mean-curvature spheres.

Modules
-------
quadrature   product rules on spheres and balls, moment identity checks
harmonics    real spherical harmonics and the Jacobi operator on round spheres
metrics      asymptotically Schwarzschild metrics and their curvature
geometry     graphs over round spheres: area, volume, mean curvature
reduction    the perturbed CMC solver and the reduced area functional
experiments  radial scans and the pulsed-metric constructions
cli          command-line front end
"""

__version__ = "0.1.0"
