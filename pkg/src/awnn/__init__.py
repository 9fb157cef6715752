"""Adaptive-width MLPs trained by backpropagation through importance-rescaled activations."""

from .datasets import TabularDataset, generate, split
from .elbo import ElboConfig, elbo
from .importance import ImportanceDist, pmf, truncated_width
from .model import AwnnModel, ModelConfig, init_model
from .trainer import AnnealSchedule, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "AwnnModel",
    "ElboConfig",
    "ImportanceDist",
    "ModelConfig",
    "TabularDataset",
    "TrainConfig",
    "elbo",
    "evaluate",
    "generate",
    "init_model",
    "pmf",
    "split",
    "train",
    "truncated_width",
]
