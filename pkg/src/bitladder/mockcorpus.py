"""Synthetic corpora for desk-scale runs of the whole pipeline.

Each mock sequence is a :class:`~bitladder.codec.MockContentParams` draw plus
per-frame statistics that depend on it: temporal activity follows the rate
demand (complexity), edge and contrast energy follow sharpness.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import MockContentParams
from .core import DEFAULT_RECIPE, EncodingRecipe, Sequence, dump_json
from .predictor.features import (
    FeatureNormalizer,
    fit_normalizer,
    handcrafted_features,
    write_feature_file,
)

COMPLEXITY_RANGE = (0.3, 4.0)  # log-uniform
SHARPNESS_RANGE = (5.0, 100.0)  # uniform
SOURCE_SIZE = (1920, 1080)


@dataclass(frozen=True)
class MockSequence:
    sequence_id: str
    params: MockContentParams
    frame_stats: tuple[dict, ...]


def derive_seed(seed: int, *keys: int | str) -> int:
    """Independent 63-bit seed for component ``keys`` of a run seeded with ``seed``."""
    ints = [k if isinstance(k, int) else zlib.crc32(k.encode()) for k in keys]
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(ints))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def mock_frame_stats(params: MockContentParams, n_frames: int = 120) -> tuple[dict, ...]:
    rng = np.random.default_rng([params.seed, 7])
    c, s = params.complexity, params.sharpness
    brightness = rng.uniform(40.0, 200.0)
    # slowly drifting motion level, so sampled frames differ
    drift = np.cumsum(rng.normal(0.0, 0.05, n_frames))
    frames = []
    for t in range(n_frames):
        motion = 20.0 * c ** 1.2 * math.exp(0.25 * rng.standard_normal() + drift[t])
        frames.append({
            "mean_luma": max(0.0, brightness + 5.0 * rng.standard_normal()),
            "luma_variance": (200.0 + 15.0 * s) * math.exp(0.2 * rng.standard_normal()),
            "gradient_energy": 10.0 * (5.0 + s) * math.sqrt(c)
            * math.exp(0.15 * rng.standard_normal()),
            "temporal_difference_energy": motion,
        })
    return tuple(frames)


def draw_params(seed: int, noise_scale: float = 0.0) -> MockContentParams:
    rng = np.random.default_rng(seed)
    lo, hi = COMPLEXITY_RANGE
    return MockContentParams(
        complexity=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
        sharpness=float(rng.uniform(*SHARPNESS_RANGE)),
        noise_scale=noise_scale,
        seed=seed,
    )


def generate_corpus(count: int, seed: int, noise_scale: float = 0.0, n_frames: int = 120,
                    prefix: str = "mock") -> list[MockSequence]:
    out = []
    for i in range(count):
        params = draw_params(derive_seed(seed, "sequence", i), noise_scale)
        out.append(MockSequence(f"{prefix}{i:04d}", params, mock_frame_stats(params, n_frames)))
    return out


def write_corpus(out_dir: str | Path, corpus: list[MockSequence], holdout: int = 0,
                 t_frames: int = 10, feature_dim: int = 8,
                 recipe: EncodingRecipe = DEFAULT_RECIPE) -> list[Sequence]:
    """Write manifest, content files, recipe, codec config and feature files.

    The last ``holdout`` sequences are tagged ``split: test``; the feature
    z-score is fitted on the training split only.
    """
    out = Path(out_dir)
    (out / "content").mkdir(parents=True, exist_ok=True)
    (out / "features").mkdir(exist_ok=True)
    manifest = []
    for i, ms in enumerate(corpus):
        path = out / "content" / f"{ms.sequence_id}.json"
        dump_json({"params": ms.params.to_dict(), "frame_stats": list(ms.frame_stats)}, path)
        split = "test" if i >= len(corpus) - holdout else "train"
        manifest.append(Sequence(ms.sequence_id, f"content/{ms.sequence_id}.json",
                                 *SOURCE_SIZE, fps=24.0, split=split))
    dump_json([s.to_dict() for s in manifest], out / "manifest.json")
    dump_json(recipe.to_dict(), out / "recipe.json")
    dump_json({"kind": "mock"}, out / "codec.json")

    shape = _Shape(t_frames, feature_dim)
    train = [ms.frame_stats for ms, s in zip(corpus, manifest) if s.split == "train"]
    norm = fit_normalizer(train or [ms.frame_stats for ms in corpus], t_frames)
    dump_json(norm.to_dict(), out / "features" / "normalizer.json")
    for ms in corpus:
        write_feature_file(out / "features" / f"{ms.sequence_id}.tagf",
                           handcrafted_features(ms.frame_stats, shape, norm, ms.sequence_id))
    return manifest


@dataclass(frozen=True)
class _Shape:
    t_frames: int
    feature_dim: int
