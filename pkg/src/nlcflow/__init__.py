"""Numerical laboratory for nonlocal curvature functionals and their flows."""

__version__ = "0.1.0"

from . import curvature, geometry, kernels, levelset, quadrature  # noqa: F401
