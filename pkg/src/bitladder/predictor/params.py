"""Parameter container, initialisation and the model file format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .config import TagrnConfig

MODEL_MAGIC = b"TAGM"
MODEL_FORMAT_VERSION = 1

GATES = ("z", "r", "h")
DIRECTIONS = ("fwd", "bwd")


def param_shapes(config: TagrnConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in the declared (serialisation) order.

    Matrices map rows (inputs) to columns (outputs): ``y = x @ W + b``. GRU gate
    matrices act on the concatenation ``[h, a]`` (hidden first).
    """
    D, H = config.feature_dim, config.gru_hidden
    shapes: dict[str, tuple[int, ...]] = {}
    for p in ("q", "k", "v", "o"):
        shapes[f"attn.w{p}"] = (D, D)
        if config.attention_bias:
            shapes[f"attn.b{p}"] = (D,)
    for layer in range(config.gru_layers):
        fan_in = H + (D if layer == 0 else 2 * H)
        for direction in DIRECTIONS:
            for g in GATES:
                shapes[f"gru.{layer}.{direction}.w{g}"] = (fan_in, H)
                shapes[f"gru.{layer}.{direction}.b{g}"] = (H,)
    shapes["cls.w"] = (2 * H, config.tasks_b * config.classes_r)
    shapes["cls.b"] = (config.tasks_b * config.classes_r,)
    return shapes


@dataclass
class TagrnParams:
    config: TagrnConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.arrays):
            missing = sorted(set(shapes) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(shapes))
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in shapes.items():
            a = self.arrays[name]
            if a.shape != shape:
                raise ValueError(f"{name}: shape {a.shape}, expected {shape}")
        self.arrays = {name: self.arrays[name] for name in shapes}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> TagrnParams:
        return TagrnParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])


def init_params(config: TagrnConfig, seed: int) -> TagrnParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return TagrnParams(config, arrays)


def save_model(path: str | Path, params: TagrnParams, seed: int = 0,
               extra: dict[str, Any] | None = None) -> None:
    """Write ``TAGM | u32 header length | JSON header | float64 LE blob``."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": params.config.to_dict(),
        "seed": int(seed),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.arrays.values())
    Path(path).write_bytes(MODEL_MAGIC + struct.pack("<I", len(head)) + head + blob)


def load_model(path: str | Path) -> tuple[TagrnParams, dict[str, Any]]:
    """Inverse of :func:`save_model`; returns the params and the full header."""
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n])
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format {header.get('format_version')}")
    config = TagrnConfig.from_dict(header["config"])
    arrays, offset = {}, 8 + n
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        arrays[spec["name"]] = np.frombuffer(
            data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return TagrnParams(config, arrays), header
