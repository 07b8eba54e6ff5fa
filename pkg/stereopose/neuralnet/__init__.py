"""Minimal trainable feedforward networks"""
from .losses import mse_loss, softmax_cross_entropy
from .network import (
    InvalidNetworkConfigError,
    MlpConfig,
    MlpModel,
    Mode,
    ShapeMismatchError,
    backward,
    forward,
    init_kaiming,
    predict,
    update_running_stats,
)
from .optim import AdamState, TrainConfig, adam_step, apply_max_norm
from .serialization import ModelFormatError, fingerprint, load_model, save_model
from .training import EmptyDatasetError, TrainingHistory, TrainingResult, train
