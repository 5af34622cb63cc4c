"""Sparse and smooth clustering of functional data.

A penalised functional Gaussian mixture is fitted by ECM. A pairwise fusion
penalty on cluster means marks, for every pair of clusters, the portions of
the domain where the two means coincide and so carry no information for
telling those clusters apart.
"""

from .basis import (
    BSplineBasis,
    StepKnots,
    design_matrix,
    evaluate_basis,
    gram_matrix,
    make_basis,
    roughness_matrix,
    step_approximation_error,
    step_knots,
)
from .data import Curve, Dataset, GroundTruth, read_dataset, write_dataset
from .ecm import AdaptiveWeights, FitConfig, FitResult, adaptive_weights, fit, fused_regions, initialize, penalized_loglik
from .metrics import adjusted_rand, mean_rmse, noninformative_fraction
from .mixture import ModelParams, classify, log_component_density, posteriors, random_effect_moments
from .selection import CVScore, SelectionGrid, SelectionResult, cv_score, select_model
from .simulate import ScenarioSpec, generate, scenario_means

__version__ = "0.1.0"
