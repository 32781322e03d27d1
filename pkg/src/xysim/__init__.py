"""Sector-exact simulation and analysis of 2D XY-model (hard-core boson) dynamics."""

from .lattice import Lattice, SectorBasis, StateVector, build_rect_lattice, enumerate_sector
from . import symmetry  # noqa: F401  (registers the symmetric-sector operator)

__version__ = "0.1.0"

__all__ = [
    "Lattice",
    "SectorBasis",
    "StateVector",
    "build_rect_lattice",
    "enumerate_sector",
]
