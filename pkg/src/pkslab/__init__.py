"""Particle systems, mean-field PDE, Liouville solver and large-deviation
tools for attractive logarithmic interactions on the flat torus."""

__version__ = "0.1.0"

from .errors import (
    CFLError,
    ConfigError,
    DomainError,
    InternalError,
    OutputError,
    PkslabError,
    PreconditionError,
    ResourceError,
    SingularityError,
    StatisticsError,
)
from .potentials import PairPotential, PotentialSpec, regularize, split_short_long
from .torus import GridDensity, HypercubePartition, lm_apply, minimal_image, periodic_displacement, wrap
from .particle import ParticleConfiguration, SimParams, simulate, simulate_ensemble
from .meanfield import MeanFieldSolver, run_pde
from .liouville import run_liouville, tensor_power

__all__ = [
    "__version__",
    "CFLError",
    "ConfigError",
    "DomainError",
    "InternalError",
    "OutputError",
    "PkslabError",
    "PreconditionError",
    "ResourceError",
    "SingularityError",
    "StatisticsError",
    "PairPotential",
    "PotentialSpec",
    "regularize",
    "split_short_long",
    "GridDensity",
    "HypercubePartition",
    "lm_apply",
    "minimal_image",
    "periodic_displacement",
    "wrap",
    "ParticleConfiguration",
    "SimParams",
    "simulate",
    "simulate_ensemble",
    "MeanFieldSolver",
    "run_pde",
    "run_liouville",
    "tensor_power",
]
