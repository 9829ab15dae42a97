"""Mini-batch SGD with momentum, weight decay and a per-epoch cosine schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import BitrateLadder
from .config import FocalLossConfig, TagrnConfig, TrainConfig
from .features import FeatureSequence
from .network import argmax_prefer_low, loss_and_grads
from .params import TagrnParams, init_params

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def to_dict(self):
        return {"loss": self.loss, "accuracy": self.accuracy, "lr": self.lr}


def cosine_lr(epoch: int, traincfg: TrainConfig) -> float:
    return traincfg.lr_initial * (1.0 + math.cos(math.pi * epoch / traincfg.epochs)) / 2.0


def stack_dataset(dataset: list[tuple[FeatureSequence, BitrateLadder]], config: TagrnConfig):
    if not dataset:
        raise ValueError("empty training set")
    X = np.stack([f.values for f, _ in dataset]).astype(float)
    Y = np.stack([lad.one_hot for _, lad in dataset]).astype(float)
    if X.shape[1:] != (config.t_frames, config.feature_dim):
        raise ValueError(f"features {X.shape[1:]} do not match config "
                         f"({config.t_frames}, {config.feature_dim})")
    if Y.shape[1:] != (config.tasks_b, config.classes_r):
        raise ValueError(f"labels {Y.shape[1:]} do not match config "
                         f"({config.tasks_b}, {config.classes_r})")
    return X, Y


def train(dataset: list[tuple[FeatureSequence, BitrateLadder]], config: TagrnConfig,
          traincfg: TrainConfig = TrainConfig(), flcfg: FocalLossConfig = FocalLossConfig(),
          params: TagrnParams | None = None) -> tuple[TagrnParams, TrainHistory]:
    """Fit the network; deterministic for a given ``traincfg.seed``.

    The update follows the usual SGD-with-momentum form
    ``v = mu * v + (g + wd * w); w -= lr * v``.
    """
    X, Y = stack_dataset(dataset, config)
    seeds = np.random.SeedSequence(traincfg.seed).spawn(2)
    if params is None:
        params = init_params(config, int(seeds[0].generate_state(1)[0]))
    else:
        params = params.copy()
    rng = np.random.default_rng(seeds[1])
    velocity = params.zeros_like()
    history = TrainHistory()
    n = len(X)
    for epoch in range(traincfg.epochs):
        lr = cosine_lr(epoch, traincfg)
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, traincfg.batch_size):
            idx = order[start:start + traincfg.batch_size]
            dropout_seed = int(rng.integers(2**63))
            # l2 = wd/2 so the gradient term is exactly wd * w
            loss, grads, P = loss_and_grads(X[idx], Y[idx], params, flcfg, mode="train",
                                            dropout_seed=dropout_seed,
                                            l2=traincfg.weight_decay / 2.0)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            for name, w in params.items():
                v = velocity[name]
                v *= traincfg.momentum
                v += grads[name]
                w -= lr * v
            total_loss += loss * len(idx)
            correct += int((argmax_prefer_low(P) == Y[idx].argmax(axis=-1)).sum())
        history.loss.append(total_loss / n)
        history.accuracy.append(correct / (n * config.tasks_b))
        history.lr.append(lr)
        if not params.all_finite():
            raise TrainingDiverged(epoch)
        log.debug("epoch %d lr %.5f loss %.4f acc %.3f", epoch, lr, history.loss[-1],
                  history.accuracy[-1])
    return params, history
