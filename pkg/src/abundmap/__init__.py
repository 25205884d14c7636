"""Latent spatial abundance model with a block-parallel Gibbs sampler."""

from .gibbs import GibbsSampler, Kernels, initial_state
from .lattice import CellGrid, build_adjacency, partition_stripes, sequential_step_count
from .model import Dataset, HyperParams
from .parallel import ThetaSchedule
from .simulate import SimConfig, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "CellGrid",
    "Dataset",
    "GibbsSampler",
    "HyperParams",
    "Kernels",
    "SimConfig",
    "ThetaSchedule",
    "build_adjacency",
    "initial_state",
    "partition_stripes",
    "sequential_step_count",
    "simulate_dataset",
]
