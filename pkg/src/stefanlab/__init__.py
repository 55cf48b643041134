"""Two-phase Stefan problem: enthalpy simulation and free-boundary regularity measurements."""

from .geometry import Grid, PlanarDomain, ScalarField, StarDomain, build_star_domain
from .stefan import SolverConfig, StefanState, Trajectory, run

__all__ = ["Grid", "PlanarDomain", "ScalarField", "StarDomain", "build_star_domain", "SolverConfig", "StefanState", "Trajectory", "run"]
__version__ = "0.1.0"
