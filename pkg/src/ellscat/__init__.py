"""Elliptic scattering on cylinder coordinates."""

from .conformal import ConformalFrame, from_cylinder, linear_trajectory, to_cylinder
from .duhamel import TailError, phi, phi_detailed, phi_dirichlet
from .norms import traj_norm, x_nu_norm, y_norm, z_norm
from .solver import (
    ChartError,
    Monomial,
    NonContractionError,
    NonlinearitySpec,
    SolveConfig,
    solve_dirichlet,
    solve_scatter,
    solve_scatter_refined,
    solve_zero,
)
from .sphere import SpectralField, SphereBasis

__version__ = "0.1.0"
