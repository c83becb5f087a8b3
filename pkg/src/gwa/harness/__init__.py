"""Desk-scale reference trainer and analysis suite."""

from .analyze import NormCorrelationReport, SampleRanking, compare_gradient_norm, rank_samples
from .datasets import Split, corrupt_labels, gaussian_blobs, load_csv, load_idx_images, two_moons
from .models import Adam, Mlp, Sgd, SoftmaxRegression, accuracy, predict
from .plots import emit_plots
from .train import (
    ProjectionConfig,
    TrainerConfig,
    TrainResult,
    build_model,
    build_optimizer,
    load_split,
    train,
)

__all__ = [
    "Adam",
    "Mlp",
    "NormCorrelationReport",
    "ProjectionConfig",
    "SampleRanking",
    "Sgd",
    "SoftmaxRegression",
    "Split",
    "TrainResult",
    "TrainerConfig",
    "accuracy",
    "build_model",
    "build_optimizer",
    "compare_gradient_norm",
    "corrupt_labels",
    "emit_plots",
    "load_split",
    "gaussian_blobs",
    "load_csv",
    "load_idx_images",
    "predict",
    "rank_samples",
    "train",
    "two_moons",
]
