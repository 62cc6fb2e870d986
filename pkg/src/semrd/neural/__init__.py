"""Neural plug-in estimation of the semantic rate-distortion surface from samples."""

from .checkpoint import load_checkpoint, save_checkpoint
from .loss import (
    NeuralDistortions,
    cascade_loss,
    cascade_loss_grad,
    energy_tables,
    nesrd_loss,
    nesrd_loss_grad,
)
from .network import MLP, CascadeNetwork, GenerativeNetwork
from .train import (
    CascadeConfig,
    CascadeResult,
    MomentumSGD,
    TrainConfig,
    TrainResult,
    consistency_sweep,
    estimate_point,
    plug_in_estimate,
    pretrain_classifier,
    pretrain_generator_moments,
    train_cascade,
    train_nesrd,
    trend_non_increasing,
)

__all__ = [
    "MLP",
    "CascadeConfig",
    "CascadeNetwork",
    "CascadeResult",
    "GenerativeNetwork",
    "MomentumSGD",
    "NeuralDistortions",
    "TrainConfig",
    "TrainResult",
    "cascade_loss",
    "cascade_loss_grad",
    "consistency_sweep",
    "energy_tables",
    "estimate_point",
    "load_checkpoint",
    "nesrd_loss",
    "nesrd_loss_grad",
    "plug_in_estimate",
    "pretrain_classifier",
    "pretrain_generator_moments",
    "save_checkpoint",
    "train_cascade",
    "train_nesrd",
    "trend_non_increasing",
]
