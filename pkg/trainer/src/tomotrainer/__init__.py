"""Desk-scale conditional noise-predictor training and TDNZ0001 serving."""

from .model import ConditionalDenoiser
from .serving import load_checkpoint, serve
from .training import TrainConfig, TrainResult, alpha_beta, compute_conditioning, train

__version__ = "0.1.0"
