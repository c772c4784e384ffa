"""Simulation of stopping agents and tests of their Bayes-optimality from observed behaviour."""

__version__ = "0.1.0"

from .beliefs import (
    Belief,
    GaussianObservationModel,
    SearchObservationModel,
    bayes_update,
    bayes_update_log,
    bayes_update_search,
    validate_simplex,
)
from .config import RunConfig, load_bundled, load_config
from .datasets import (
    SearchDataset,
    SHTDataset,
    StoppingDataset,
    aggregate_search,
    aggregate_sht,
    aggregate_stopping,
    read_dataset,
    write_dataset,
)
from .finite_sample import (
    DetectorResult,
    ErrorBounds,
    irl_detector,
    min_perturbation_feasible,
    min_perturbation_infeasible,
    search_error_bounds,
    sht_error_bounds,
    stopping_error_bounds,
)
from .irl_search import check_feasibility_search
from .irl_sht import check_feasibility_sht, regularized_point_estimate
from .irl_stopping import FeasibilityResult, check_feasibility_stopping, reconstruct_continue_costs
from .search import SearchEnvironmentSet, simulate_search
from .sht import EnvironmentSet, simulate_sht, solve_sht_policy

__all__ = [
    "Belief", "GaussianObservationModel", "SearchObservationModel", "bayes_update", "bayes_update_log",
    "bayes_update_search", "validate_simplex", "RunConfig", "load_bundled", "load_config",
    "SearchDataset", "SHTDataset", "StoppingDataset", "aggregate_search", "aggregate_sht",
    "aggregate_stopping", "read_dataset", "write_dataset", "DetectorResult", "ErrorBounds",
    "irl_detector", "min_perturbation_feasible", "min_perturbation_infeasible", "search_error_bounds",
    "sht_error_bounds", "stopping_error_bounds", "check_feasibility_search", "check_feasibility_sht",
    "regularized_point_estimate", "FeasibilityResult", "check_feasibility_stopping",
    "reconstruct_continue_costs", "SearchEnvironmentSet", "simulate_search", "EnvironmentSet",
    "simulate_sht", "solve_sht_policy", "__version__",
]
