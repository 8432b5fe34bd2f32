"""Location aggregation for spatial population CTMC models."""

from .clustering import ClusterMap, build_similarity, choose_k, njw_cluster, spectral_decompose
from .distances import (DistanceMatrix, linear_noise_distance, mean_field_distance,
                        physical_distance)
from .fluid import (SteadyState, SteadyStateOptions, build_mean_field, build_moment_closure,
                    integrate_to_steady_state)
from .model import AgentType, Location, Observable, SpatialModel, Transition
from .pipeline import ComparisonReport, PipelineConfig, error_ratio, run_pipeline
from .reduction import ReducedModel, aggregate_initial_state, reduce_observable, rewrite_transitions
from .simulator import SimConfig, TrajectoryEnsemble, simulate_ensemble
from .spm import load_model, parse_model, save_model, serialize_model

__all__ = [
    "AgentType", "ClusterMap", "ComparisonReport", "DistanceMatrix", "Location", "Observable",
    "PipelineConfig", "ReducedModel", "SimConfig", "SpatialModel", "SteadyState",
    "SteadyStateOptions", "TrajectoryEnsemble", "Transition", "aggregate_initial_state",
    "build_mean_field", "build_moment_closure", "build_similarity", "choose_k", "error_ratio",
    "integrate_to_steady_state", "linear_noise_distance", "load_model", "mean_field_distance",
    "njw_cluster", "parse_model", "physical_distance", "reduce_observable", "rewrite_transitions",
    "run_pipeline", "save_model", "serialize_model", "simulate_ensemble", "spectral_decompose",
]

__version__ = "0.1.0"
