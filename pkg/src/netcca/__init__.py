"""Network-structured sparse canonical correlation analysis."""

__version__ = "0.1.0"

from .estimator import NetworkSCCA, NetworkSCCACV  # noqa: E402
from .graph import FeatureGraph, load_edge_list  # noqa: E402
from .penalty import PenaltyConfig  # noqa: E402
from .scca import CcaModel, FitConfig, fit  # noqa: E402

__all__ = [
    "CcaModel",
    "FeatureGraph",
    "FitConfig",
    "NetworkSCCA",
    "NetworkSCCACV",
    "PenaltyConfig",
    "fit",
    "load_edge_list",
]
