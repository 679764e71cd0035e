"""Dual attention graph convolutional networks for graph classification."""

from .autodiff import Tape, Tensor
from .graphs import Dataset, Graph, load_tu_dataset, normalize_adjacency, stratified_kfold
from .model import ModelConfig, ModelParams, init_params, model_forward
from .training import CVReport, FoldReport, TrainConfig, run_cv

__all__ = [
    "CVReport", "Dataset", "FoldReport", "Graph", "ModelConfig", "ModelParams", "Tape",
    "Tensor", "TrainConfig", "init_params", "load_tu_dataset", "model_forward",
    "normalize_adjacency", "run_cv", "stratified_kfold",
]

__version__ = "0.1.0"
