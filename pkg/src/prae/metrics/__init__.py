from .assignment import Assignment, solve_auction, solve_exact
from .core import (
    MetricsReport,
    chamfer,
    chamfer_terms,
    emd_approx,
    emd_exact,
    evaluate_pair,
    f1_score,
    hausdorff,
)
from .nn import BRUTE_FORCE, SPATIAL_INDEX, KDTree, nearest_neighbors, nn_distances

__all__ = [
    "Assignment",
    "BRUTE_FORCE",
    "KDTree",
    "MetricsReport",
    "SPATIAL_INDEX",
    "chamfer",
    "chamfer_terms",
    "emd_approx",
    "emd_exact",
    "evaluate_pair",
    "f1_score",
    "hausdorff",
    "nearest_neighbors",
    "nn_distances",
    "solve_auction",
    "solve_exact",
]
