"""Wick-ordered Gibbs measures and the truncated Wick NLS on T^2 and on the
Dirichlet square."""
from .errors import (
    AliasingError,
    DomainError,
    EstimationError,
    RangeError,
    ResourceError,
    StiffnessError,
    WickGibbsError,
)
from .torus import SpectralField, sample_gff, sigma_n
from .wickpoly import WickContext, wick_abs_power, wick_hermite_split

__version__ = "0.1.0"
