"""Multistage stochastic LP toolkit: SDDP training, rolling-horizon and
stationary policy evaluation, and offline forecast-horizon learning."""

__version__ = "0.1.0"

from .model import HPOPInstance, build_hpop, load_instance, save_instance
from .rolling import PolicySpec, SimulationResult, simulate
from .sddp import CutPool, SddpProblem, TrainConfig, train
from .simplex import LinearProgram, LPSolution, solve
from .stationary import StationaryModel, evaluate_stationary, sample_horizon, train_stationary
from .horizon import (
    HorizonMap,
    ScanConfig,
    compute_kappa,
    epsilon_sufficient_horizon,
    fit_horizon_map,
    stability_scan,
    suboptimality_bound,
)

__all__ = [
    "HPOPInstance",
    "HorizonMap",
    "CutPool",
    "LinearProgram",
    "LPSolution",
    "PolicySpec",
    "ScanConfig",
    "SddpProblem",
    "SimulationResult",
    "StationaryModel",
    "TrainConfig",
    "build_hpop",
    "compute_kappa",
    "epsilon_sufficient_horizon",
    "evaluate_stationary",
    "fit_horizon_map",
    "load_instance",
    "sample_horizon",
    "save_instance",
    "simulate",
    "solve",
    "stability_scan",
    "suboptimality_bound",
    "train",
    "train_stationary",
]
