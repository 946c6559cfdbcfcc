"""Scaling laws for split model training and the compute allocation they imply."""

from .allocator import (
    AllocationSolution,
    PowerLawFit,
    SplitPoint,
    avg_loss,
    compute_multiplier,
    extrapolate_fraction,
    fit_power_law,
    minimal_split_point,
    solve_allocation,
)
from .cluster import ClusterModel, EmbeddingSet, assign, balanced_kmeans, recall_at_k, route_topk
from .dataset import Dataset, RunRecord, ScenarioSplit, filter_outliers, parse_runs, scenario_split
from .fitter import FitConfig, FitResult, Metrics, evaluate, fit_basin_hopping, fit_local, huber, objective
from .laws import (
    ChinchillaParams,
    LiewParams,
    SplitLawParams,
    eval_bias,
    eval_chinchilla,
    eval_liew,
    eval_split_law,
    grad_split_law,
    partials_tokens,
)
from .transforms import TransformSpec, inverse_transform, transform

__version__ = "0.1.0"
