"""Two-part zero-inflated spatio-temporal count modeling.

The package builds latent Gaussian models from Matern fields on a
triangulated mesh, AR(1) temporal dynamics and spline trends, fits them
with an empirical-Bayes Laplace approximation, runs the sequential
binary/count hurdle with a cross-validated zero-classification
threshold, and maps posterior exceedance probabilities.
"""

from .geometry import (
    FemMatrices,
    Mesh,
    Point,
    Projector,
    Region,
    RegionSet,
    assemble_fem,
    build_mesh,
    locate_region,
    project_points,
)
from .fields import (
    Ar1Params,
    PrecisionBlock,
    SpdeParams,
    SplineBasis,
    ar1_precision,
    build_spline_basis,
    matern_covariance,
    pc_prior_logpdf,
    space_time_precision,
    spde_precision,
)
from .likelihoods import (
    FamilySpec,
    dlog_pmf,
    family_mean,
    family_variance,
    log_pmf,
    sample_family,
    zero_inflated_pmf,
)

__version__ = "0.1.0"
