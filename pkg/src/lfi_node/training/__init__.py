"""Loss assembly, window batching, Adam, latent features and the training loops."""

from .latent import LatentFeature, LatentReport, precompute_latent_features
from .log import TrainLog, TrainRecord
from .losses import data_loss, total_loss
from .narx import NarxModel, train_narx
from .optimizer import AdamState, adam_step
from .predict import load_trained, predict, rmse
from .trainer import TrainConfig, TrainMode, train
from .windows import gather_windows, sample_windows

__all__ = [
    "AdamState",
    "LatentFeature",
    "LatentReport",
    "NarxModel",
    "TrainConfig",
    "TrainLog",
    "TrainMode",
    "TrainRecord",
    "adam_step",
    "data_loss",
    "gather_windows",
    "load_trained",
    "precompute_latent_features",
    "predict",
    "rmse",
    "sample_windows",
    "total_loss",
    "train",
    "train_narx",
]
