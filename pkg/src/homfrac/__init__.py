"""Fractional Laplacians and Sobolev seminorms on homogeneous groups."""

from .errors import HomfracError
from .gauge import Gauge, default_gauge, make_gauge
from .group import GroupSpec, builtin, euclidean, heisenberg, parabolic_r2
from .quadrature import Estimate, QuadratureConfig

__version__ = "0.1.0"

__all__ = [
    "Estimate",
    "Gauge",
    "GroupSpec",
    "HomfracError",
    "QuadratureConfig",
    "builtin",
    "default_gauge",
    "euclidean",
    "heisenberg",
    "make_gauge",
    "parabolic_r2",
]
