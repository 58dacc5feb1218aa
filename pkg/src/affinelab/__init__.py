"""affinelab: a numerical laboratory for hyperbolic affine spheres.

Solve Wang's equation for the conformal factor of the affine metric
determined by a polynomial cubic differential, transport the frame of the
affine immersion along flat-metric geodesics, and compare the resulting
holonomy spectra against the closed-form growth rates
exp(lambda^(1/3) * mu_i * L), mu_i the roots of mu^3 - 3 mu - 2 cos(3 theta).
"""

from .asymptotics import (BracketReport, GrowthCheck, PerturbedSystem,
                          SystemSolution, WeightedColumn, char_poly_compare,
                          column_growth_check, contraction_certificate,
                          eigenvalue_bracket, integrate_system,
                          perturbed_system_from_field, picard_fixed_point)
from .cubics import (MuTriple, SpectralTriple, SupersolutionRoot, mu_roots,
                     predicted_log_spectrum, supersolution_root)
from .errors import (ConfigError, ConvergenceError, GridMismatchError,
                     OutOfDomainError, SingularPointError)
from .fields import (CubicDifferential, GeodesicSegment, Grid2D, ScalarField,
                     complex_derivative, flat_coordinate, flat_metric_factor)
from .surface import (EmbeddedPatch, default_initial_frame, export_mesh,
                      integrate_embedding)
from .transport import (FrameMatrix, HolonomyResult, StructureMatrices, eig3,
                        holonomy, path_independence_residual,
                        structure_matrices, transport)
from .verify import VerificationSuite
from .wang import (Annulus, Barrier, MetricSweep, Rectangle, SolveReport,
                   WangProblem, barriers, residual, solve, subsolution_field,
                   verify_metric_asymptotics)

__version__ = "0.1.0"
