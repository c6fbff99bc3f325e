"""Multimodal sentiment model with adversarial autoencoders, a cross-modal
gate mechanism and multi-head-attention fusion, on a small reverse-mode
tensor core."""

from .data import (
    DatasetHeader,
    ModalSample,
    SyntheticSpec,
    generate_synthetic,
    make_batches,
    read_feature_file,
    write_feature_file,
)
from .estimator import McihnRegressor
from .metrics import MetricsReport, evaluate as evaluate_metrics
from .model import ModelParams
from .tensor import Tape, Tensor, backward, grad_check
from .train import (
    Adam,
    Checkpoint,
    TrainConfig,
    evaluate_checkpoint,
    run_ablation_suite,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Checkpoint",
    "DatasetHeader",
    "McihnRegressor",
    "MetricsReport",
    "ModalSample",
    "ModelParams",
    "SyntheticSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "backward",
    "evaluate_checkpoint",
    "evaluate_metrics",
    "generate_synthetic",
    "grad_check",
    "make_batches",
    "read_feature_file",
    "run_ablation_suite",
    "train",
    "write_feature_file",
]
