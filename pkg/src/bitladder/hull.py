"""Ground-truth ladders: per preset bitrate, the resolution with the best quality."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import BitrateLadder, EncodingRecipe, LadderError, RDCurve, RDSurface


class TieBreak(str, enum.Enum):
    LOWEST_RESOLUTION = "lowest_resolution"
    HIGHEST_RESOLUTION = "highest_resolution"


@dataclass(frozen=True)
class HullOptions:
    tie_break: TieBreak = TieBreak.LOWEST_RESOLUTION
    require_full_coverage: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))


class CoverageError(ValueError):
    pass


def build_ladder(surface: RDSurface, recipe: EncodingRecipe | None = None,
                 options: HullOptions = HullOptions()) -> BitrateLadder:
    """Pick ``argmax_r quality(r, b)`` at every recipe bitrate.

    Only resolutions actually encoded at ``b`` compete. Qualities are compared
    exactly; ties go to the fewest (or most) pixels per ``options.tie_break``.
    With ``require_full_coverage=False`` an uncovered bitrate reuses the choice
    made at the nearest covered bitrate below it (above, if none is below).
    """
    recipe = recipe or surface.recipe
    if not surface.curves:
        raise CoverageError(f"surface {surface.sequence_id} is empty")
    prefer_low = options.tie_break is TieBreak.LOWEST_RESOLUTION
    # recipe order is descending pixels; scan so the preferred side comes first
    order = list(recipe.resolutions)
    if prefer_low:
        order.reverse()
    entries, uncovered = [], []
    for b in recipe.target_bitrates_kbps:
        best, best_q = None, -np.inf
        for r in order:
            curve = surface.curves.get(r)
            p = curve.at(b) if curve is not None else None
            if p is not None and p.quality > best_q:
                best, best_q = r, p.quality
        if best is None:
            uncovered.append(b)
        else:
            entries.append((b, best))
    if uncovered and (options.require_full_coverage or not entries):
        raise CoverageError(
            f"surface {surface.sequence_id}: no encoded resolution at {uncovered} kbps"
        )
    for b in uncovered:
        below = [e for e in entries if e[0] < b]
        src = below[-1] if below else min(entries, key=lambda e: e[0])
        entries.append((b, src[1]))
    entries.sort(key=lambda e: e[0])
    return BitrateLadder.from_entries(entries, recipe, surface.sequence_id)


def follow_ladder(surface: RDSurface, ladder: BitrateLadder) -> RDCurve:
    """The composite curve picked out by ``ladder`` from ``surface``."""
    pts = []
    for b, r in ladder.entries:
        curve = surface.curves.get(r)
        p = curve.at(b) if curve is not None else None
        if p is None:
            raise LadderError(
                f"{surface.sequence_id}: ladder entry {r} at {b} kbps was never encoded"
            )
        pts.append(p)
    return RDCurve(None, tuple(pts))


def hull_curve(surface: RDSurface, ladder: BitrateLadder | None = None) -> RDCurve:
    """Pointwise-max envelope; ``ladder`` defaults to :func:`build_ladder` of the surface."""
    if ladder is None:
        ladder = build_ladder(surface)
    return follow_ladder(surface, ladder)


def class_histogram(ladders: Iterable[BitrateLadder], recipe: EncodingRecipe) -> np.ndarray:
    """B x R counts of chosen resolutions."""
    counts = np.zeros((recipe.num_bitrates, recipe.num_resolutions), dtype=np.int64)
    for ladder in ladders:
        if (tuple(ladder.resolutions) != recipe.resolutions
                or tuple(b for b, _ in ladder.entries) != recipe.target_bitrates_kbps):
            raise ValueError(f"ladder {ladder.sequence_id!r} does not match the recipe")
        counts += ladder.one_hot
    return counts


def histogram_csv(counts: np.ndarray, recipe: EncodingRecipe) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bitrate_kbps"] + [f"res_{i}" for i in range(recipe.num_resolutions)])
    for b, row in zip(recipe.target_bitrates_kbps, counts):
        w.writerow([b] + [int(c) for c in row])
    return buf.getvalue()
