"""Temporal-attention + bidirectional-GRU resolution classifier (numpy)."""

from .attention import attention_forward
from .config import FocalLossConfig, TagrnConfig, TrainConfig
from .features import (
    FeatureNormalizer,
    FeatureSequence,
    fit_normalizer,
    handcrafted_features,
    read_feature_file,
    write_feature_file,
)
from .gru import gru_forward
from .head import classify, focal_loss, inverse_frequency_alpha
from .network import backward, forward, loss_and_grads, predict_ladder
from .params import TagrnParams, init_params, load_model, save_model
from .train import TrainHistory, TrainingDiverged, cosine_lr, train

__all__ = [
    "FeatureNormalizer", "FeatureSequence", "FocalLossConfig", "TagrnConfig", "TagrnParams",
    "TrainConfig", "TrainHistory", "TrainingDiverged", "attention_forward", "backward",
    "classify", "cosine_lr", "fit_normalizer", "focal_loss", "forward", "gru_forward",
    "handcrafted_features", "init_params", "inverse_frequency_alpha", "load_model",
    "loss_and_grads", "predict_ladder", "read_feature_file", "save_model", "train",
    "write_feature_file",
]
