from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping


@dataclass(frozen=True)
class TagrnConfig:
    """Network shape. Defaults are the full-size model (D=512, n=4, 2x256 Bi-GRU)."""

    tasks_b: int
    classes_r: int
    t_frames: int = 10
    feature_dim: int = 512
    heads: int = 4
    gru_layers: int = 2
    gru_hidden: int = 256
    dropout_p: float = 0.25
    # 1/sqrt(D) by default; True switches to the usual 1/sqrt(D/n)
    per_head_scale: bool = False
    attention_bias: bool = True

    def __post_init__(self):
        if self.feature_dim < 1 or self.t_frames < 1:
            raise ValueError("t_frames and feature_dim must be >= 1")
        if self.heads < 1 or self.feature_dim % self.heads:
            raise ValueError(f"feature_dim {self.feature_dim} not divisible by heads {self.heads}")
        if self.tasks_b < 1:
            raise ValueError("tasks_b must be >= 1")
        if self.classes_r < 2:
            raise ValueError("classes_r must be >= 2")
        if self.gru_layers < 1 or self.gru_hidden < 1:
            raise ValueError("GRU needs at least one layer and one hidden unit")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.feature_dim // self.heads

    @property
    def attention_scale(self) -> float:
        d = self.head_dim if self.per_head_scale else self.feature_dim
        return 1.0 / d ** 0.5

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TagrnConfig:
        return cls(**d)


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alpha: tuple[float, ...] | None = None  # per class; None means all 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
            if any(a <= 0 for a in self.alpha):
                raise ValueError("alpha entries must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {"gamma": self.gamma, "alpha": list(self.alpha) if self.alpha else None}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr_initial: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr_initial <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive; momentum and weight_decay non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
