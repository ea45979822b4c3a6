"""Doubly robust difference-in-differences under network interference."""

from .data import NEVER, PanelDataset, RcsDataset, StaggeredPanel, load_panel, load_rcs, load_staggered
from .errors import ConvergenceError, DataError, EstimationError, NetDidError, OverlapError
from .estimators import (
    EstimateReport,
    InferenceConfig,
    att_total,
    datt_hat,
    datt_level,
    datt_overall,
    naive_dr_did,
    rcs_datt_hat,
    satt_hat,
    satt_overall,
    staggered_match,
)
from .exposure import ExposureMap, ExposureVector, exposure_vector
from .graph import Graph, build_from_edges, random_geometric_graph
from .nuisance import CellModels, LearnerConfig, NuisanceFit
from .simulate import DgpConfig, McConfig, MethodSpec, run_monte_carlo, simulate
from .variance import ScoreVector, bandwidth, hac_variance, iid_variance

__version__ = "0.1.0"
