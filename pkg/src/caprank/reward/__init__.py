"""Trainable scalar reward head: MLP, pairwise ranking loss, AdamW, training."""

from .head import HeadArchitecture, HeadParameters, forward, forward_batch, init_parameters, zero_parameters
from .loss import pair_loss, pair_loss_batch
from .adamw import AdamWState, adamw_step
from .checkpoint import Checkpoint, checkpoint_file_hash, load_checkpoint, save_checkpoint
from .train import TrainConfig, pairwise_accuracy, train

__all__ = [
    "HeadArchitecture",
    "HeadParameters",
    "forward",
    "forward_batch",
    "init_parameters",
    "zero_parameters",
    "pair_loss",
    "pair_loss_batch",
    "AdamWState",
    "adamw_step",
    "Checkpoint",
    "checkpoint_file_hash",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "pairwise_accuracy",
    "train",
]
