"""Cascaded multi-tier GAN training engine with an in-repo autodiff tensor core."""

from .tensor import Tensor, backward, no_grad, precision
from .training import NoiseSpec, TrainConfig, train_gan

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "precision", "NoiseSpec", "TrainConfig", "train_gan"]
