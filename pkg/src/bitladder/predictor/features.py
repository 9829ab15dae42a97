"""Feature sequences: the binary feature file and a handcrafted stand-in extractor.

The network only sees a ``T x D`` matrix. Any upstream extractor (a frozen
CNN with global average pooling, say) can supply it by writing the feature
file; :func:`handcrafted_features` is the built-in fallback computed from
cheap per-frame statistics.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence as Seq

import numpy as np

FEATURE_MAGIC = b"TAGF"
FEATURE_VERSION = 1

STAT_FIELDS = ("mean_luma", "luma_variance", "gradient_energy", "temporal_difference_energy")


@dataclass(frozen=True)
class FeatureSequence:
    values: np.ndarray
    sequence_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"feature sequence must be T x D with T, D >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature sequence contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def write_feature_file(path: str | Path, features: FeatureSequence) -> None:
    """``TAGF | u16 version | u32 T | u32 D | T*D float32 LE`` plus a JSON sidecar."""
    path = Path(path)
    T, D = features.shape
    body = np.ascontiguousarray(features.values, dtype="<f4").tobytes()
    path.write_bytes(FEATURE_MAGIC + struct.pack("<HII", FEATURE_VERSION, T, D) + body)
    path.with_suffix(".json").write_text(
        json.dumps({"sequence_id": features.sequence_id}, sort_keys=True) + "\n")


def read_feature_file(path: str | Path) -> FeatureSequence:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad magic")
    version, T, D = struct.unpack("<HII", data[4:14])
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature version {version}")
    if len(data) != 14 + 4 * T * D:
        raise ValueError(f"{path}: expected {T}x{D} floats, file size {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=14).reshape(T, D).astype(np.float64)
    sidecar = path.with_suffix(".json")
    seq_id = json.loads(sidecar.read_text())["sequence_id"] if sidecar.exists() else path.stem
    return FeatureSequence(values, seq_id)


# -- handcrafted fallback ---------------------------------------------------

def _stat_matrix(frame_stats: Seq[Mapping[str, float]], t_frames: int) -> np.ndarray:
    if len(frame_stats) < t_frames:
        raise ValueError(f"missing frames: need {t_frames}, got {len(frame_stats)}")
    # uniform temporal sampling over the whole clip
    idx = np.round(np.linspace(0, len(frame_stats) - 1, t_frames)).astype(int)
    try:
        raw = np.array([[float(frame_stats[i][k]) for k in STAT_FIELDS] for i in idx])
    except KeyError as e:
        raise ValueError(f"frame record lacks {e.args[0]!r}") from None
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("frame statistics must be finite and non-negative")
    return np.log1p(raw)


@dataclass(frozen=True)
class FeatureNormalizer:
    """Per-statistic z-score fitted over a corpus."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


def fit_normalizer(corpus: Iterable[Seq[Mapping[str, float]]], t_frames: int) -> FeatureNormalizer:
    stacked = np.concatenate([_stat_matrix(fs, t_frames) for fs in corpus])
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return FeatureNormalizer(tuple(stacked.mean(axis=0)), tuple(std))


def handcrafted_features(frame_stats: Seq[Mapping[str, float]], config,
                         normalizer: FeatureNormalizer | None = None,
                         sequence_id: str = "") -> FeatureSequence:
    """T frames of log-compressed statistics, optionally z-scored, zero-padded to D.

    Without a normaliser the values are ``log1p`` of the raw statistics, so an
    all-zero statistic stays zero.
    """
    D = config.feature_dim
    if D < len(STAT_FIELDS):
        raise ValueError(f"feature_dim too small: {D} < {len(STAT_FIELDS)} statistics")
    stats = _stat_matrix(frame_stats, config.t_frames)
    if normalizer is not None:
        stats = (stats - np.asarray(normalizer.mean)) / np.asarray(normalizer.std)
    out = np.zeros((config.t_frames, D))
    out[:, :stats.shape[1]] = stats
    return FeatureSequence(out, sequence_id)
