"""Gaussian Kohler-Jobin rearrangement: torsion, principal frequency and the half-space comparison."""

__version__ = "0.1.0"

from .special import (DomainError, HalfSpaceTables, gaussian_cdf, gaussian_quantile, halfspace_torsion,
                      halfspace_torsion_deriv, halfspace_torsion_function, halfspace_torsion_inverse,
                      torsion_slope)
from .geometry import (ConvexPolygon, Disk, HalfLine, Interval, Mesh, ScalarField, ValidationError,
                       build_mesh, domain_from_dict, gaussian_measure, integrate)
from .ou_solver import (NumericalError, SpectralResult, assemble, halfspace_frequency, rayleigh_quotient,
                        solve_frequency, solve_torsion, torsional_rigidity)
from .coarea import LevelProfile, distribution_D, level_profile, modified_torsion, optimal_phi
from .rearrange import (KJReport, RearrangedProfile, build_rearrangement, evaluate_dagger,
                        generalized_frequency_check, kj_pipeline, verify_theorem_4_2)

__all__ = [name for name in dir() if not name.startswith("_")]
