"""Numerical laboratory for Dirichlet-to-Neumann maps of magnetic wave operators
on Riemannian domains, their gauge/diffeomorphism invariance and the geometry
(boundary normal coordinates, focal points, travel-time sets) behind it."""

__version__ = "0.1.0"

from .fields import Domain, OperatorSpec, SpecError, apply_spatial_operator, probe_operator  # noqa: E402,F401
from .wave import BoundarySource, dtn_map, solve_ibvp  # noqa: E402,F401
