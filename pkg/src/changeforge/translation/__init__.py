"""Cycle-consistent adversarial translation between two image domains."""

from .inference import load_generator, run_tiled, translate
from .losses import (
    LossReport,
    adversarial_loss,
    cycle_loss,
    discriminator_loss,
    full_objective,
    generator_adversarial_loss,
)
from .networks import CycleNets, TranslatorParams, discriminator_arch, generator_arch
from .replay import ReplayBuffer
from .training import (
    ConfigError,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    generator_objective,
    init_nets,
    lr_at,
    train,
    train_datasets,
    train_step,
)

__all__ = [
    "ConfigError", "CycleNets", "LossReport", "ReplayBuffer", "TrainConfig", "TrainResult",
    "TrainingDivergedError", "TranslatorParams", "adversarial_loss", "cycle_loss",
    "discriminator_arch", "discriminator_loss", "full_objective", "generator_adversarial_loss",
    "generator_arch", "generator_objective", "init_nets", "load_generator", "lr_at", "run_tiled",
    "train", "train_datasets", "train_step", "translate",
]
