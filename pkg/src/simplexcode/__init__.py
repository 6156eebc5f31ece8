"""Spherical simplex codes: optimal conical decision regions, Gaussian centroids
and relaxed alternating optimisation of codebooks under Gaussian noise."""

from .errors import *  # noqa: F401,F403
from .geometry import (
    Codebook,
    PairValidity,
    SimplicialCone,
    VertexTuple,
    optimal_vertices,
    reflect_across_facet,
    regular_simplex,
    regularity,
    validate_pair,
)
from .gaussian import (
    ConeMoments,
    EstimatorConfig,
    GaussianChannel,
    cone_conditional_cov,
    cone_conditional_mean,
    cone_measure,
    crn_compare,
)
from .centroid import CentroidResult, centroid_fixed_point, contraction_certificate, mean_norm_check
from .optimizer import ObjectiveEstimate, OptimizerTrace, evaluate_Q, optimize, v_step, w_step
from .proofchecks import check_instance, facet_system, random_instance
from .serialization import load_codebook, save_codebook

__version__ = "0.1.0"
