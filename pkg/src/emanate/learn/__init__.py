"""Datasets, the residual classifier and its training loop."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSplit, LabeledExample, Task, build_dataset, build_datasets, split_dataset
from .estimator import ResidualSpectralClassifier, SpectralScaler
from .nn import ConvNetModel, softmax
from .train import Metrics, TrainConfig, evaluate, grad_check, train, train_arrays

__all__ = [
    "ConvNetModel",
    "DatasetSplit",
    "LabeledExample",
    "Metrics",
    "ResidualSpectralClassifier",
    "SpectralScaler",
    "Task",
    "TrainConfig",
    "build_dataset",
    "build_datasets",
    "evaluate",
    "grad_check",
    "load_checkpoint",
    "save_checkpoint",
    "softmax",
    "split_dataset",
    "train",
    "train_arrays",
]
