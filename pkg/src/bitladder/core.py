"""Domain types shared across the ladder pipeline.

Everything here is immutable after construction. Resolutions are identified by
(width, height); names such as ``"1080p"`` are display aliases only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence as Seq

import numpy as np

MIN_DIMENSION = 16


class RecipeError(ValueError):
    """Raised when an encoding recipe violates its invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class LadderError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class Resolution:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"non-integer resolution {self.width}x{self.height}")
        if self.width < MIN_DIMENSION or self.height < MIN_DIMENSION:
            raise ValueError(
                f"resolution {self.width}x{self.height} below {MIN_DIMENSION}px minimum"
            )

    @property
    def pixels(self) -> int:
        return self.width * self.height

    @property
    def name(self) -> str:
        return f"{self.height}p"

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"

    def to_dict(self) -> dict[str, int]:
        return {"w": self.width, "h": self.height}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Resolution:
        w = d["w"] if "w" in d else d["width"]
        h = d["h"] if "h" in d else d["height"]
        return cls(int(w), int(h))

    @classmethod
    def parse(cls, text: str) -> Resolution:
        """Parse ``"1280x720"``."""
        w, _, h = text.lower().partition("x")
        return cls(int(w), int(h))


@dataclass(frozen=True)
class EncodingRecipe:
    """Resolution set (descending pixel count) and ascending target bitrates."""

    resolutions: tuple[Resolution, ...]
    target_bitrates_kbps: tuple[int, ...]
    codec_profile: str = "x265-2pass"

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        object.__setattr__(
            self, "target_bitrates_kbps", tuple(int(b) for b in self.target_bitrates_kbps)
        )

    @property
    def num_resolutions(self) -> int:
        return len(self.resolutions)

    @property
    def num_bitrates(self) -> int:
        return len(self.target_bitrates_kbps)

    def resolution_index(self, resolution: Resolution) -> int:
        try:
            return self.resolutions.index(resolution)
        except ValueError:
            raise KeyError(f"resolution {resolution} not in recipe") from None

    def bitrate_index(self, bitrate_kbps: int) -> int:
        try:
            return self.target_bitrates_kbps.index(int(bitrate_kbps))
        except ValueError:
            raise KeyError(f"bitrate {bitrate_kbps} not in recipe") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "resolutions": [r.to_dict() for r in self.resolutions],
            "target_bitrates_kbps": list(self.target_bitrates_kbps),
            "codec_profile": self.codec_profile,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EncodingRecipe:
        return cls(
            resolutions=tuple(Resolution.from_dict(r) for r in d["resolutions"]),
            target_bitrates_kbps=tuple(d["target_bitrates_kbps"]),
            codec_profile=d.get("codec_profile", "x265-2pass"),
        )


# 216p..1080p streaming range and the multi-codec DASH bitrate set.
DEFAULT_RECIPE = EncodingRecipe(
    resolutions=(
        Resolution(1920, 1080),
        Resolution(1280, 720),
        Resolution(960, 540),
        Resolution(768, 432),
        Resolution(640, 360),
        Resolution(480, 270),
        Resolution(384, 216),
    ),
    target_bitrates_kbps=(240, 375, 550, 750, 1000, 1500, 2300, 3000, 4300, 5800),
    codec_profile="x265-2pass",
)


def validate_recipe(recipe: EncodingRecipe) -> EncodingRecipe:
    """Return ``recipe`` unchanged or raise :class:`RecipeError` listing every violation."""
    problems = []
    res = recipe.resolutions
    rates = recipe.target_bitrates_kbps
    if not res:
        problems.append("empty resolution set")
    elif len(res) < 2:
        problems.append("R >= 2 required")
    if not rates:
        problems.append("empty bitrate set")
    elif len(rates) < 2:
        problems.append("B >= 2 required")
    if len(set(res)) != len(res):
        problems.append("duplicate resolution")
    pixels = [r.pixels for r in res]
    if len(set(pixels)) != len(pixels):
        problems.append("duplicate pixel count")
    elif any(a < b for a, b in zip(pixels, pixels[1:])):
        problems.append("resolutions not descending by pixel count")
    if any(b <= 0 for b in rates):
        problems.append("non-positive bitrate")
    if len(set(rates)) != len(rates):
        problems.append("duplicate bitrate")
    if any(a >= b for a, b in zip(rates, rates[1:])) and len(set(rates)) == len(rates):
        problems.append("bitrates not ascending")
    if problems:
        raise RecipeError(problems)
    return recipe


@dataclass(frozen=True)
class RDPoint:
    resolution: Resolution
    target_bitrate_kbps: int
    actual_bitrate_kbps: float
    quality: float

    def __post_init__(self):
        if not (np.isfinite(self.actual_bitrate_kbps) and self.actual_bitrate_kbps > 0):
            raise ValueError(f"actual bitrate must be positive, got {self.actual_bitrate_kbps}")
        if not (0.0 <= self.quality <= 100.0):
            raise ValueError(f"quality {self.quality} outside [0, 100]")
        if self.target_bitrate_kbps <= 0:
            raise ValueError("target bitrate must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.resolution.width,
            "height": self.resolution.height,
            "target_bitrate_kbps": int(self.target_bitrate_kbps),
            "actual_bitrate_kbps": float(self.actual_bitrate_kbps),
            "quality": float(self.quality),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RDPoint:
        return cls(
            resolution=Resolution(int(d["width"]), int(d["height"])),
            target_bitrate_kbps=int(d["target_bitrate_kbps"]),
            actual_bitrate_kbps=float(d["actual_bitrate_kbps"]),
            quality=float(d["quality"]),
        )


@dataclass(frozen=True)
class RDCurve:
    """Points sorted by target bitrate.

    ``resolution`` is None for composite curves (a ladder or hull), whose
    points may come from different resolutions.
    """

    resolution: Resolution | None
    points: tuple[RDPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if self.resolution is not None:
            for p in pts:
                if p.resolution != self.resolution:
                    raise ValueError(
                        f"point at {p.resolution} on curve for {self.resolution}"
                    )
        targets = [p.target_bitrate_kbps for p in pts]
        if any(a >= b for a, b in zip(targets, targets[1:])):
            raise ValueError("curve target bitrates must be strictly ascending")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.actual_bitrate_kbps for p in self.points], dtype=float)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points], dtype=float)

    @property
    def target_bitrates(self) -> tuple[int, ...]:
        return tuple(p.target_bitrate_kbps for p in self.points)

    def at(self, target_bitrate_kbps: int) -> RDPoint | None:
        for p in self.points:
            if p.target_bitrate_kbps == target_bitrate_kbps:
                return p
        return None

    @classmethod
    def from_arrays(cls, rates: Iterable[float], qualities: Iterable[float],
                    resolution: Resolution | None = None) -> RDCurve:
        """Build a curve from bare (rate, quality) samples; targets are the rounded rates' rank."""
        res = resolution or Resolution(16, 16)
        pairs = sorted(zip(rates, qualities))
        pts = tuple(
            RDPoint(res, i + 1, float(r), float(q)) for i, (r, q) in enumerate(pairs)
        )
        return cls(resolution, pts)


@dataclass(frozen=True)
class RDSurface:
    sequence_id: str
    recipe: EncodingRecipe
    curves: Mapping[Resolution, RDCurve]
    quality_metric: str = "vmaf"

    def __post_init__(self):
        ordered = {}
        for r in self.recipe.resolutions:
            if r in self.curves:
                ordered[r] = self.curves[r]
        extra = set(self.curves) - set(ordered)
        if extra:
            raise ValueError(f"curves for resolutions outside recipe: {sorted(map(str, extra))}")
        targets = set(self.recipe.target_bitrates_kbps)
        for r, c in ordered.items():
            if c.resolution != r:
                raise ValueError(f"curve keyed {r} holds {c.resolution}")
            stray = set(c.target_bitrates) - targets
            if stray:
                raise ValueError(f"{r}: target bitrates {sorted(stray)} not in recipe")
        object.__setattr__(self, "curves", ordered)

    def uncovered_bitrates(self) -> list[int]:
        covered = {b for c in self.curves.values() for b in c.target_bitrates}
        return [b for b in self.recipe.target_bitrates_kbps if b not in covered]

    @property
    def incomplete(self) -> bool:
        return bool(self.uncovered_bitrates())

    def points(self) -> list[RDPoint]:
        return [p for c in self.curves.values() for p in c.points]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence_id": self.sequence_id,
            "quality_metric": self.quality_metric,
            "recipe": self.recipe.to_dict(),
            "points": [p.to_dict() for p in self.points()],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RDSurface:
        recipe = validate_recipe(EncodingRecipe.from_dict(d["recipe"]))
        return surface_from_points(
            d["sequence_id"], recipe, (RDPoint.from_dict(p) for p in d["points"]),
            quality_metric=d.get("quality_metric", "vmaf"),
        )


def surface_from_points(sequence_id: str, recipe: EncodingRecipe, points: Iterable[RDPoint],
                        quality_metric: str = "vmaf") -> RDSurface:
    """Group points into per-resolution curves; duplicate (resolution, target) pairs are an error."""
    by_res: dict[Resolution, dict[int, RDPoint]] = {}
    for p in points:
        slot = by_res.setdefault(p.resolution, {})
        if p.target_bitrate_kbps in slot:
            raise ValueError(
                f"duplicate point for {p.resolution} at {p.target_bitrate_kbps} kbps"
            )
        slot[p.target_bitrate_kbps] = p
    curves = {
        r: RDCurve(r, tuple(slot[b] for b in sorted(slot))) for r, slot in by_res.items()
    }
    return RDSurface(sequence_id, recipe, curves, quality_metric)


def surface_lookup(surface: RDSurface, resolution: Resolution,
                   target_bitrate: int) -> RDPoint | None:
    curve = surface.curves.get(resolution)
    if curve is None:
        return None
    return curve.at(target_bitrate)


@dataclass(frozen=True)
class BitrateLadder:
    """One resolution per recipe bitrate, ascending.

    ``resolutions`` is the recipe's column order used by :attr:`one_hot`.
    """

    entries: tuple[tuple[int, Resolution], ...]
    resolutions: tuple[Resolution, ...]
    sequence_id: str = ""

    def __post_init__(self):
        entries = tuple((int(b), r) for b, r in self.entries)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        rates = [b for b, _ in entries]
        if any(a >= b for a, b in zip(rates, rates[1:])):
            raise LadderError("ladder bitrates must be strictly ascending")
        for b, r in entries:
            if r not in self.resolutions:
                raise LadderError(f"{r} at {b} kbps is not a recipe resolution")

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, Resolution]], recipe: EncodingRecipe,
                     sequence_id: str = "") -> BitrateLadder:
        mapping = {}
        for b, r in entries:
            b = int(b)
            if b in mapping:
                raise LadderError(f"duplicate ladder entry at {b} kbps")
            mapping[b] = r
        missing = [b for b in recipe.target_bitrates_kbps if b not in mapping]
        extra = sorted(set(mapping) - set(recipe.target_bitrates_kbps))
        if missing:
            raise LadderError(f"ladder missing bitrates {missing}")
        if extra:
            raise LadderError(f"ladder has bitrates outside recipe {extra}")
        return cls(
            tuple((b, mapping[b]) for b in recipe.target_bitrates_kbps),
            recipe.resolutions,
            sequence_id,
        )

    @classmethod
    def from_indices(cls, indices: Seq[int], recipe: EncodingRecipe,
                     sequence_id: str = "") -> BitrateLadder:
        if len(indices) != recipe.num_bitrates:
            raise LadderError(f"expected {recipe.num_bitrates} indices, got {len(indices)}")
        return cls(
            tuple((b, recipe.resolutions[int(i)])
                  for b, i in zip(recipe.target_bitrates_kbps, indices)),
            recipe.resolutions,
            sequence_id,
        )

    @classmethod
    def from_one_hot(cls, one_hot: np.ndarray, recipe: EncodingRecipe,
                     sequence_id: str = "") -> BitrateLadder:
        one_hot = np.asarray(one_hot)
        if one_hot.shape != (recipe.num_bitrates, recipe.num_resolutions):
            raise LadderError(f"one-hot shape {one_hot.shape} does not match recipe")
        if not np.all((one_hot == 0) | (one_hot == 1)) or not np.all(one_hot.sum(axis=1) == 1):
            raise LadderError("rows must be one-hot")
        return cls.from_indices(one_hot.argmax(axis=1).tolist(), recipe, sequence_id)

    @property
    def indices(self) -> list[int]:
        return [self.resolutions.index(r) for _, r in self.entries]

    @property
    def one_hot(self) -> np.ndarray:
        y = np.zeros((len(self.entries), len(self.resolutions)), dtype=np.int64)
        y[np.arange(len(self.entries)), self.indices] = 1
        return y

    def resolution_at(self, bitrate_kbps: int) -> Resolution:
        for b, r in self.entries:
            if b == bitrate_kbps:
                return r
        raise KeyError(bitrate_kbps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence_id": self.sequence_id,
            "entries": [
                {"bitrate_kbps": b, "width": r.width, "height": r.height}
                for b, r in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], recipe: EncodingRecipe) -> BitrateLadder:
        entries = [
            (int(e["bitrate_kbps"]), Resolution(int(e["width"]), int(e["height"])))
            for e in d["entries"]
        ]
        return cls.from_entries(entries, recipe, d.get("sequence_id", ""))


@dataclass(frozen=True)
class BDResult:
    bd_rate_percent: float
    bd_quality: float
    # log10(kbps) interval shared by both curves
    overlap_interval: tuple[float, float] | None = None
    quality_interval: tuple[float, float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "bd_rate_percent": self.bd_rate_percent,
            "bd_quality": self.bd_quality,
            "overlap": {
                "log10_rate": list(self.overlap_interval) if self.overlap_interval else None,
                "quality": list(self.quality_interval) if self.quality_interval else None,
            },
        }


@dataclass(frozen=True)
class Sequence:
    """One source entry of a sequence manifest."""

    sequence_id: str
    path: str
    width: int
    height: int
    fps: float = 24.0
    split: str = ""

    @property
    def resolution(self) -> Resolution:
        return Resolution(self.width, self.height)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "sequence_id": self.sequence_id,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
        }
        if self.split:
            d["split"] = self.split
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Sequence:
        return cls(
            sequence_id=str(d["sequence_id"]),
            path=str(d["path"]),
            width=int(d["width"]),
            height=int(d["height"]),
            fps=float(d.get("fps", 24.0)),
            split=str(d.get("split", "")),
        )


# -- file helpers -----------------------------------------------------------

def dump_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_recipe(path: str | Path) -> EncodingRecipe:
    return validate_recipe(EncodingRecipe.from_dict(json.loads(Path(path).read_text())))


def load_surface(path: str | Path) -> RDSurface:
    return RDSurface.from_dict(json.loads(Path(path).read_text()))


def load_ladder(path: str | Path, recipe: EncodingRecipe) -> BitrateLadder:
    return BitrateLadder.from_dict(json.loads(Path(path).read_text()), recipe)


def load_manifest(path: str | Path) -> list[Sequence]:
    """Read a JSON list of sequence records; relative paths resolve against the manifest.

    Malformed JSON raises ValueError carrying the offending line number.
    """
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}:{e.lineno}: malformed manifest ({e.msg})") from e
    if not isinstance(raw, list):
        raise ValueError(f"{path}:1: manifest must be a JSON list")
    base = Path(path).parent
    out = []
    for i, rec in enumerate(raw):
        try:
            seq = Sequence.from_dict(rec)
            if not Path(seq.path).is_absolute():
                seq = replace(seq, path=str(base / seq.path))
            out.append(seq)
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{path}: record {i}: {e}") from e
    ids = [s.sequence_id for s in out]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sequence_id")
    return out
