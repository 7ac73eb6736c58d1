"""Minimal-variance sampling for mini-batch GCN training, with a variance lab."""

from .config import TrainConfig, load_config
from .experiments import run_variance_experiment
from .graph import GraphDataset, LaplacianConfig, SparseMatrix, build_csr, normalize_laplacian, synth_sbm
from .solver import optimal_probs, oracle_probs, quickselect_threshold
from .train import f1_micro, run_train

__all__ = [
    "GraphDataset", "LaplacianConfig", "SparseMatrix", "TrainConfig", "build_csr", "f1_micro",
    "load_config", "normalize_laplacian", "optimal_probs", "oracle_probs", "quickselect_threshold",
    "run_train", "run_variance_experiment", "synth_sbm",
]
