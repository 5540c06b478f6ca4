"""Stochastic recurrent network with parametric biases (SRNN-PB)."""

from .kernels import BACKEND
from .model import ModelConfig, ModelParams, generate_closed_loop, init_params, rollout
from .numerics import AdamState, RngStream, adam_step, pca_fit, pearson_correlation
from .recognition import RecognitionConfig, recognize, run_recognition_experiment
from .training import DivergenceError, LossBreakdown, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AdamState",
    "DivergenceError",
    "LossBreakdown",
    "ModelConfig",
    "ModelParams",
    "RecognitionConfig",
    "RngStream",
    "TrainConfig",
    "adam_step",
    "generate_closed_loop",
    "init_params",
    "pca_fit",
    "pearson_correlation",
    "recognize",
    "rollout",
    "run_recognition_experiment",
    "train",
]
