"""Twofold correlation spreading after quenches in the 1D Bose-Hubbard chain."""

from .dispersion import DispersionRelation, Kind, VelocitySet, velocity_set
from .maps import CorrelationMap, read_map, write_map
from .model import INFINITE, BoseHubbardParams, QuenchProtocol, poisson_cutoff

__version__ = "0.1.0"

__all__ = [
    "INFINITE",
    "BoseHubbardParams",
    "QuenchProtocol",
    "poisson_cutoff",
    "CorrelationMap",
    "read_map",
    "write_map",
    "DispersionRelation",
    "Kind",
    "VelocitySet",
    "velocity_set",
]
