"""Propensity and outcome-change learners: polynomial sieve GLMs and a small GNN."""

from .features import FeatureMatrix, build_features
from .fit import CellModels, LearnerConfig, NuisanceFit, RcsFit, SpilloverFit, fit_nuisances, rcs_fit, spillover_fit
from .glm import GlmFit, fit_least_squares, fit_logistic
from .gnn import GnnConfig, GnnParams, gnn_backward, gnn_forward, gnn_train, init_params

__all__ = [
    "FeatureMatrix",
    "build_features",
    "CellModels",
    "LearnerConfig",
    "NuisanceFit",
    "fit_nuisances",
    "RcsFit",
    "SpilloverFit",
    "rcs_fit",
    "spillover_fit",
    "GlmFit",
    "fit_least_squares",
    "fit_logistic",
    "GnnConfig",
    "GnnParams",
    "gnn_backward",
    "gnn_forward",
    "gnn_train",
    "init_params",
]
