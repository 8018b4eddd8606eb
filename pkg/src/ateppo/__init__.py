"""Adversarial skill-embedding PPO for multi-task reinforcement learning."""
from .config import TrainConfig, preset
from .trainer import Trainer, run

__all__ = ["TrainConfig", "Trainer", "preset", "run"]
__version__ = "0.1.0"
