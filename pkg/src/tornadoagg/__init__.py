"""Deterministic simulator of star and ring federated learning architectures."""

from .dataset import Examples, FederatedDataset, NodeDataset, generate_synthetic
from .engine import EvalRecord, RunResult, Simulation, evaluate, run, run_centralized
from .errors import ConfigError, DivergedError, InvalidArgument, ParseError
from .grouping import GroupAssignment, cluster, group, group_by_iid, random_grouping
from .model import Hyperparams
from .topology import ArchitectureConfig, comm_cost, schedule

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig", "ConfigError", "DivergedError", "EvalRecord", "Examples", "FederatedDataset",
    "GroupAssignment", "Hyperparams", "InvalidArgument", "NodeDataset", "ParseError", "RunResult", "Simulation",
    "cluster", "comm_cost", "evaluate", "generate_synthetic", "group", "group_by_iid", "random_grouping", "run",
    "run_centralized", "schedule",
]
