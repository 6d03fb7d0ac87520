"""Atomistic and Peierls-Nabarro models of a dislocation in an AB-stacked
bilayer with a complex hexagonal lattice, and tools to compare them."""

__version__ = "0.1.0"

from .kernels import available as available_backends, get_backend
from .lattice import LatticeSpec, TruncatedLattice, build_lattice, triangulate
from .material import (
    ElasticConstants, GammaSurface, Material, ModelAssumptionError, check_assumptions, compute_eps,
    de_for_eps, elastic_constants,
)
from .potentials import HarmonicTriplet, ThreeBodyPotential, TwoBodyPotential
from .pn_solver import PNProfile, bps_energy, continuum_stability, profile_for_material, solve_profile
from .atomistic import AtomisticModel, SolverError, read_checkpoint, write_checkpoint
from .analysis import DiscreteFunction, XepsForm, interpolate, nearest_filter, norm_X0_pl, stability_gap
from .experiments import Setup, consistency, converge, stability

__all__ = [
    "__version__", "available_backends", "get_backend",
    "LatticeSpec", "TruncatedLattice", "build_lattice", "triangulate",
    "ElasticConstants", "GammaSurface", "Material", "ModelAssumptionError", "check_assumptions",
    "compute_eps", "de_for_eps", "elastic_constants",
    "HarmonicTriplet", "ThreeBodyPotential", "TwoBodyPotential",
    "PNProfile", "bps_energy", "continuum_stability", "profile_for_material", "solve_profile",
    "AtomisticModel", "SolverError", "read_checkpoint", "write_checkpoint",
    "DiscreteFunction", "XepsForm", "interpolate", "nearest_filter", "norm_X0_pl", "stability_gap",
    "Setup", "consistency", "converge", "stability",
]
