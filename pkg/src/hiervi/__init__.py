"""Variational inference for two-level hierarchical Bayesian models.

Plain ELBO, importance-weighted, and uncorrected-Hamiltonian-annealing
bounds, composable into locally-enhanced bounds with unbiased group
subsampling.
"""

from .bounds import BoundEstimate, BoundSpec, NoiseStreams, estimate
from .family import VariationalState, init_state
from .model import (GroupData, HierarchicalDataset, ModelInstance,
                    conjugate_oracle, movielens_logistic, synthetic_linear)
from .train import TrainConfig, evaluate_final, train

__all__ = [
    "BoundEstimate", "BoundSpec", "NoiseStreams", "estimate",
    "VariationalState", "init_state",
    "GroupData", "HierarchicalDataset", "ModelInstance",
    "conjugate_oracle", "movielens_logistic", "synthetic_linear",
    "TrainConfig", "evaluate_final", "train",
]
